//! IBM Model 1 word alignment.
//!
//! A model is trained per direction: a *conditioning* side (with an optional
//! NULL word) generates the other side. Two directional Viterbi alignments are
//! then combined by [`symmetrize`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::fmt::significant;

pub const NULL_TOKEN: &str = "<NULL>";

#[derive(Debug, Error, PartialEq)]
pub enum WordAlignError {
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("at least one EM iteration is required")]
    ZeroIterations,
    #[error("directional alignments disagree on sentence lengths ({0})")]
    LengthMismatch(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model1Config {
    pub iterations: usize,
    /// Probabilities below this are pruned after each M-step; lookups that miss
    /// the table fall back to it.
    pub prob_floor: f64,
    pub use_null: bool,
}

impl Default for Model1Config {
    fn default() -> Self {
        Model1Config {
            iterations: 5,
            prob_floor: 1e-7,
            use_null: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Vocab {
    ids: HashMap<String, u32>,
    words: Vec<String>,
}

impl Vocab {
    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.ids.insert(w.to_string(), id);
        self.words.push(w.to_string());
        id
    }

    fn get(&self, w: &str) -> Option<u32> {
        self.ids.get(w).copied()
    }

    fn len(&self) -> usize {
        self.words.len()
    }
}

/// Language labels of a table: `t(generated | conditioning)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Direction {
    pub conditioning: String,
    pub generated: String,
}

/// Word translation probabilities `t(generated | conditioning)`, stored
/// sparsely per conditioning word with generated ids sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationTable {
    pub direction: Direction,
    pub prob_floor: f64,
    use_null: bool,
    cond: Vocab,
    gen: Vocab,
    offsets: Vec<usize>,
    gen_ids: Vec<u32>,
    probs: Vec<f64>,
}

impl TranslationTable {
    fn slot(&self, cond: u32, gen: u32) -> Option<usize> {
        let (lo, hi) = (self.offsets[cond as usize], self.offsets[cond as usize + 1]);
        self.gen_ids[lo..hi]
            .binary_search(&gen)
            .ok()
            .map(|k| lo + k)
    }

    fn stored(&self, cond: u32, gen: u32) -> f64 {
        self.slot(cond, gen).map_or(0.0, |s| self.probs[s])
    }

    /// Stored probability, if any.
    pub fn prob(&self, conditioning: &str, generated: &str) -> Option<f64> {
        let c = self.cond.get(conditioning)?;
        let g = self.gen.get(generated)?;
        self.slot(c, g).map(|s| self.probs[s])
    }

    /// Stored probability or the floor.
    pub fn prob_or_floor(&self, conditioning: &str, generated: &str) -> f64 {
        self.prob(conditioning, generated)
            .unwrap_or(self.prob_floor)
            .max(self.prob_floor)
    }

    /// `t(generated | NULL)`, or the floor when NULL is disabled or absent.
    pub fn null_prob_or_floor(&self, generated: &str) -> f64 {
        if self.use_null {
            self.prob_or_floor(NULL_TOKEN, generated)
        } else {
            self.prob_floor
        }
    }

    pub fn uses_null(&self) -> bool {
        self.use_null
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn conditioning_vocab_size(&self) -> usize {
        self.cond.len()
    }

    pub fn generated_vocab_size(&self) -> usize {
        self.gen.len()
    }

    /// Largest deviation from one of any conditioning word's total mass.
    pub fn normalization_error(&self) -> f64 {
        (0..self.cond.len())
            .filter(|&c| self.offsets[c] < self.offsets[c + 1])
            .map(|c| {
                let s: f64 = self.probs[self.offsets[c]..self.offsets[c + 1]].iter().sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Entries sorted by conditioning word then generated word.
    pub fn entries(&self) -> Vec<(&str, &str, f64)> {
        let mut out: Vec<(&str, &str, f64)> = (0..self.cond.len())
            .flat_map(|c| {
                (self.offsets[c]..self.offsets[c + 1]).map(move |s| {
                    (
                        self.cond.words[c].as_str(),
                        self.gen.words[self.gen_ids[s] as usize].as_str(),
                        self.probs[s],
                    )
                })
            })
            .collect();
        out.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        out
    }

    /// `conditioning \t generated \t probability` lines, 8 significant digits.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (c, g, p) in self.entries() {
            let _ = writeln!(out, "{c}\t{g}\t{}", significant(p, 8));
        }
        out
    }

    pub fn from_tsv(text: &str, prob_floor: f64) -> Result<Self, WordAlignError> {
        let mut rows: Vec<(String, String, f64)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| WordAlignError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let mut fields = line.split('\t');
            let (Some(c), Some(g), Some(p), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(err("expected 3 tab-separated fields"));
            };
            let p: f64 = p.parse().map_err(|_| err("bad probability"))?;
            if !(p > 0.0 && p <= 1.0 + 1e-9) {
                return Err(err("probability out of range"));
            }
            rows.push((c.to_string(), g.to_string(), p));
        }
        let use_null = rows.iter().any(|r| r.0 == NULL_TOKEN);
        let mut cond = Vocab::default();
        let mut gen = Vocab::default();
        let mut triples: Vec<(u32, u32, f64)> = rows
            .iter()
            .map(|(c, g, p)| (cond.intern(c), gen.intern(g), *p))
            .collect();
        triples.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let table = TranslationTable::from_sorted(cond, gen, &triples, prob_floor, use_null);
        table.dedup_check().map_err(|reason| WordAlignError::Parse { line: 0, reason })?;
        Ok(table)
    }

    fn dedup_check(&self) -> Result<(), String> {
        for c in 0..self.cond.len() {
            let ids = &self.gen_ids[self.offsets[c]..self.offsets[c + 1]];
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(format!("duplicate entry for {}", self.cond.words[c]));
            }
        }
        Ok(())
    }

    fn from_sorted(
        cond: Vocab,
        gen: Vocab,
        triples: &[(u32, u32, f64)],
        prob_floor: f64,
        use_null: bool,
    ) -> Self {
        let mut offsets = vec![0usize; cond.len() + 1];
        for &(c, _, _) in triples {
            offsets[c as usize + 1] += 1;
        }
        for c in 0..cond.len() {
            offsets[c + 1] += offsets[c];
        }
        TranslationTable {
            direction: Direction::default(),
            prob_floor,
            use_null,
            cond,
            gen,
            offsets,
            gen_ids: triples.iter().map(|t| t.1).collect(),
            probs: triples.iter().map(|t| t.2).collect(),
        }
    }
}

/// A trained model with the corpus log-likelihood of the initial table and
/// after every iteration.
#[derive(Debug, Clone)]
pub struct Model1 {
    pub table: TranslationTable,
    pub log_likelihoods: Vec<f64>,
}

struct Encoded {
    /// Conditioning ids, NULL first when enabled.
    cond: Vec<u32>,
    gen: Vec<u32>,
}

const MAX_CHUNKS: usize = 16;

fn chunk_size(n: usize) -> usize {
    n.div_ceil(MAX_CHUNKS).max(256)
}

/// Log-likelihood contribution of one sentence pair under the stored table.
fn pair_log_likelihood(table: &TranslationTable, s: &Encoded) -> f64 {
    let positions = s.cond.len() as f64;
    s.gen
        .iter()
        .map(|&g| {
            let total: f64 = s.cond.iter().map(|&c| table.stored(c, g)).sum();
            let total = if total > 0.0 { total } else { table.prob_floor };
            (total / positions).ln()
        })
        .sum()
}

fn encoded_log_likelihood(table: &TranslationTable, corpus: &[Encoded]) -> f64 {
    corpus
        .par_chunks(chunk_size(corpus.len()))
        .map(|chunk| chunk.iter().map(|s| pair_log_likelihood(table, s)).sum::<f64>())
        .collect::<Vec<f64>>()
        .into_iter()
        .sum()
}

/// Trains `t(generated | conditioning)` with EM. Each element of `pairs` is
/// (conditioning sentence, generated sentence).
pub fn train_model1(
    pairs: &[(&[String], &[String])],
    config: &Model1Config,
) -> Result<Model1, WordAlignError> {
    if pairs.is_empty() {
        return Err(WordAlignError::EmptyCorpus);
    }
    if config.iterations == 0 {
        return Err(WordAlignError::ZeroIterations);
    }
    let mut cond_vocab = Vocab::default();
    let mut gen_vocab = Vocab::default();
    let null_id = config.use_null.then(|| cond_vocab.intern(NULL_TOKEN));
    let corpus: Vec<Encoded> = pairs
        .iter()
        .filter(|(c, g)| !g.is_empty() && (!c.is_empty() || config.use_null))
        .map(|(c, g)| Encoded {
            cond: null_id
                .into_iter()
                .chain(c.iter().map(|w| cond_vocab.intern(w)))
                .collect(),
            gen: g.iter().map(|w| gen_vocab.intern(w)).collect(),
        })
        .collect();
    if corpus.is_empty() {
        return Err(WordAlignError::EmptyCorpus);
    }

    // Uniform initialization over co-occurring pairs.
    let mut support: HashSet<(u32, u32)> = HashSet::new();
    for s in &corpus {
        for &c in &s.cond {
            for &g in &s.gen {
                support.insert((c, g));
            }
        }
    }
    let mut pairs_sorted: Vec<(u32, u32)> = support.into_iter().collect();
    pairs_sorted.sort_unstable();
    let mut per_cond = vec![0usize; cond_vocab.len()];
    for &(c, _) in &pairs_sorted {
        per_cond[c as usize] += 1;
    }
    let triples: Vec<(u32, u32, f64)> = pairs_sorted
        .iter()
        .map(|&(c, g)| (c, g, 1.0 / per_cond[c as usize] as f64))
        .collect();
    let mut table = TranslationTable::from_sorted(
        cond_vocab,
        gen_vocab,
        &triples,
        config.prob_floor,
        config.use_null,
    );

    let mut log_likelihoods = Vec::with_capacity(config.iterations + 1);
    for _ in 0..config.iterations {
        let (counts, ll) = expected_counts(&table, &corpus);
        log_likelihoods.push(ll);
        table = maximize(&table, &counts);
    }
    log_likelihoods.push(encoded_log_likelihood(&table, &corpus));
    Ok(Model1 {
        table,
        log_likelihoods,
    })
}

/// E-step. Chunk boundaries depend only on the corpus size and partial counts
/// are added in chunk order, so the result does not depend on thread count.
fn expected_counts(table: &TranslationTable, corpus: &[Encoded]) -> (Vec<f64>, f64) {
    let partials: Vec<(Vec<f64>, f64)> = corpus
        .par_chunks(chunk_size(corpus.len()))
        .map(|chunk| {
            let mut counts = vec![0.0; table.probs.len()];
            let mut ll = 0.0;
            let mut slots: Vec<Option<usize>> = Vec::new();
            for s in chunk {
                let positions = s.cond.len() as f64;
                for &g in &s.gen {
                    slots.clear();
                    slots.extend(s.cond.iter().map(|&c| table.slot(c, g)));
                    let total: f64 = slots
                        .iter()
                        .map(|slot| slot.map_or(0.0, |k| table.probs[k]))
                        .sum();
                    if total > 0.0 {
                        for &k in slots.iter().flatten() {
                            counts[k] += table.probs[k] / total;
                        }
                        ll += (total / positions).ln();
                    } else {
                        ll += (table.prob_floor / positions).ln();
                    }
                }
            }
            (counts, ll)
        })
        .collect();
    let mut iter = partials.into_iter();
    let (mut counts, mut ll) = iter.next().unwrap_or_default();
    for (c, l) in iter {
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
        ll += l;
    }
    (counts, ll)
}

/// M-step: normalize counts per conditioning word, prune below the floor and
/// renormalize.
fn maximize(table: &TranslationTable, counts: &[f64]) -> TranslationTable {
    let mut triples = Vec::with_capacity(counts.len());
    for c in 0..table.cond.len() {
        let range = table.offsets[c]..table.offsets[c + 1];
        let total: f64 = counts[range.clone()].iter().sum();
        if total <= 0.0 {
            continue;
        }
        let normalized: Vec<(u32, f64)> = range
            .clone()
            .map(|k| (table.gen_ids[k], counts[k] / total))
            .collect();
        let mut kept: Vec<(u32, f64)> = normalized
            .iter()
            .copied()
            .filter(|&(_, p)| p >= table.prob_floor)
            .collect();
        if kept.is_empty() {
            // Keep the best entry so the word stays defined.
            let best = normalized
                .iter()
                .copied()
                .fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
            kept.push(best);
        }
        let kept_total: f64 = kept.iter().map(|k| k.1).sum();
        triples.extend(kept.into_iter().map(|(g, p)| (c as u32, g, p / kept_total)));
    }
    let mut next = TranslationTable::from_sorted(
        table.cond.clone(),
        table.gen.clone(),
        &triples,
        table.prob_floor,
        table.use_null,
    );
    next.direction = table.direction.clone();
    next
}

/// `Σ log P(generated | conditioning)` over the corpus, with the Model 1 length
/// constant set to one.
pub fn corpus_log_likelihood(pairs: &[(&[String], &[String])], table: &TranslationTable) -> f64 {
    let null = table.use_null.then_some(NULL_TOKEN);
    pairs
        .iter()
        .map(|(c, g)| {
            let cond: Vec<&str> = null
                .into_iter()
                .chain(c.iter().map(String::as_str))
                .collect();
            let positions = cond.len() as f64;
            g.iter()
                .map(|w| {
                    let total: f64 = cond.iter().map(|cw| table.prob(cw, w).unwrap_or(0.0)).sum();
                    let total = if total > 0.0 { total } else { table.prob_floor };
                    (total / positions).ln()
                })
                .sum::<f64>()
        })
        .sum()
}

/// For each generated position, the linked conditioning position or `None`
/// for NULL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionalAlignment {
    pub conditioning_len: usize,
    pub links: Vec<Option<usize>>,
}

/// Links every generated token to its most probable conditioning word. Ties go
/// to the smallest position; NULL wins only when strictly better. Tokens with
/// no stored probability against the sentence link to NULL.
pub fn viterbi_align(
    conditioning: &[String],
    generated: &[String],
    table: &TranslationTable,
) -> DirectionalAlignment {
    let links = generated
        .iter()
        .map(|g| {
            let mut best: Option<(usize, f64)> = None;
            for (i, c) in conditioning.iter().enumerate() {
                let p = table.prob(c, g).unwrap_or(0.0);
                if p > 0.0 && best.is_none_or(|(_, b)| p > b) {
                    best = Some((i, p));
                }
            }
            let null = if table.use_null {
                table.prob(NULL_TOKEN, g).unwrap_or(0.0)
            } else {
                0.0
            };
            match best {
                Some((i, p)) if p >= null => Some(i),
                _ => None,
            }
        })
        .collect();
    DirectionalAlignment {
        conditioning_len: conditioning.len(),
        links,
    }
}

/// Symmetric word alignment: a set of (source position, target position).
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WordAlignment {
    pub links: BTreeSet<(usize, usize)>,
}

impl WordAlignment {
    pub fn from_links(links: impl IntoIterator<Item = (usize, usize)>) -> Self {
        WordAlignment {
            links: links.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// `i-j i-j ...`
    pub fn to_pharaoh(&self) -> String {
        let parts: Vec<String> = self.links.iter().map(|(i, j)| format!("{i}-{j}")).collect();
        parts.join(" ")
    }

    pub fn parse_pharaoh(s: &str) -> Option<Self> {
        s.split_whitespace()
            .map(|p| {
                let (i, j) = p.split_once('-')?;
                Some((i.parse().ok()?, j.parse().ok()?))
            })
            .collect::<Option<BTreeSet<_>>>()
            .map(|links| WordAlignment { links })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Heuristic {
    Intersection,
    Union,
    #[default]
    GrowDiagFinalAnd,
}

impl Heuristic {
    pub fn name(self) -> &'static str {
        match self {
            Heuristic::Intersection => "intersection",
            Heuristic::Union => "union",
            Heuristic::GrowDiagFinalAnd => "grow-diag-final-and",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Heuristic::Intersection,
            Heuristic::Union,
            Heuristic::GrowDiagFinalAnd,
        ]
        .into_iter()
        .find(|h| h.name() == s)
    }
}

const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, 0),
    (0, -1),
    (1, 0),
    (0, 1),
    (-1, -1),
    (-1, 1),
    (1, -1),
    (1, 1),
];

/// Combines `src_given_tgt` (each source token linked to a target position)
/// and `tgt_given_src` (each target token linked to a source position) into
/// (source, target) links.
pub fn symmetrize(
    src_given_tgt: &DirectionalAlignment,
    tgt_given_src: &DirectionalAlignment,
    heuristic: Heuristic,
) -> Result<WordAlignment, WordAlignError> {
    let src_len = src_given_tgt.links.len();
    let tgt_len = tgt_given_src.links.len();
    if src_given_tgt.conditioning_len != tgt_len || tgt_given_src.conditioning_len != src_len {
        return Err(WordAlignError::LengthMismatch(format!(
            "{}x{} vs {}x{}",
            src_len, src_given_tgt.conditioning_len, tgt_given_src.conditioning_len, tgt_len
        )));
    }
    let forward: BTreeSet<(usize, usize)> = src_given_tgt
        .links
        .iter()
        .enumerate()
        .filter_map(|(s, t)| t.map(|t| (s, t)))
        .collect();
    let backward: BTreeSet<(usize, usize)> = tgt_given_src
        .links
        .iter()
        .enumerate()
        .filter_map(|(t, s)| s.map(|s| (s, t)))
        .collect();
    let union: BTreeSet<_> = forward.union(&backward).copied().collect();
    let intersection: BTreeSet<_> = forward.intersection(&backward).copied().collect();
    let links = match heuristic {
        Heuristic::Intersection => intersection,
        Heuristic::Union => union,
        Heuristic::GrowDiagFinalAnd => {
            grow_diag_final_and(src_len, tgt_len, intersection, &union, &forward, &backward)
        }
    };
    Ok(WordAlignment { links })
}

fn grow_diag_final_and(
    src_len: usize,
    tgt_len: usize,
    mut alignment: BTreeSet<(usize, usize)>,
    union: &BTreeSet<(usize, usize)>,
    forward: &BTreeSet<(usize, usize)>,
    backward: &BTreeSet<(usize, usize)>,
) -> BTreeSet<(usize, usize)> {
    let mut src_aligned = vec![false; src_len];
    let mut tgt_aligned = vec![false; tgt_len];
    for &(s, t) in &alignment {
        src_aligned[s] = true;
        tgt_aligned[t] = true;
    }

    // grow-diag: loop over target words, then source words, in order.
    loop {
        let mut added = false;
        for t in 0..tgt_len {
            for s in 0..src_len {
                if !alignment.contains(&(s, t)) {
                    continue;
                }
                for (dt, ds) in NEIGHBOURS {
                    let (Some(tn), Some(sn)) = (t.checked_add_signed(dt), s.checked_add_signed(ds))
                    else {
                        continue;
                    };
                    if tn >= tgt_len || sn >= src_len {
                        continue;
                    }
                    if (!tgt_aligned[tn] || !src_aligned[sn])
                        && union.contains(&(sn, tn))
                        && alignment.insert((sn, tn))
                    {
                        tgt_aligned[tn] = true;
                        src_aligned[sn] = true;
                        added = true;
                    }
                }
            }
        }
        if !added {
            break;
        }
    }

    // final-and, once per direction.
    for directional in [forward, backward] {
        for t in 0..tgt_len {
            for s in 0..src_len {
                if !tgt_aligned[t] && !src_aligned[s] && directional.contains(&(s, t)) {
                    alignment.insert((s, t));
                    tgt_aligned[t] = true;
                    src_aligned[s] = true;
                }
            }
        }
    }
    alignment
}
