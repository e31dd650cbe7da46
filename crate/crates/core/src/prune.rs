//! Significance pruning of phrase tables.
//!
//! Every phrase pair gets a 2×2 contingency table over sentence pairs (does the
//! foreign side contain the foreign phrase, does the english side contain the
//! english phrase). Pairs whose right-tail Fisher exact p-value is not small
//! enough are dropped. The threshold is expressed as `-ln p`; the reference
//! point `ln N` is the score of a pair seen once, on both sides, together.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use rayon::prelude::*;
use thiserror::Error;

use crate::phrase_table::PhraseTable;
use crate::sentence_align::AlignedCorpus;

#[derive(Debug, Error, PartialEq)]
pub enum PruneError {
    #[error("invalid contingency table {0:?}")]
    Domain(ContingencyTable),
    #[error("phrase pair {foreign:?} ||| {english:?} does not occur jointly in the corpus")]
    Inconsistent { foreign: String, english: String },
    #[error("count list covers {counts} entries, table has {entries}")]
    CountMismatch { counts: usize, entries: usize },
    #[error("invalid threshold {0:?}; expected alpha, alpha+e or a non-negative number")]
    Threshold(String),
}

/// Sentence-pair counts: containing the foreign phrase (`c_s`), the english
/// phrase (`c_t`), both (`c_st`), out of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContingencyTable {
    pub c_s: u64,
    pub c_t: u64,
    pub c_st: u64,
    pub n: u64,
}

impl ContingencyTable {
    pub fn new(c_s: u64, c_t: u64, c_st: u64, n: u64) -> Self {
        ContingencyTable { c_s, c_t, c_st, n }
    }

    pub fn is_valid(&self) -> bool {
        self.c_st > 0
            && self.c_st <= self.c_s.min(self.c_t)
            && self.c_s.max(self.c_t) <= self.n
            && self.c_s + self.c_t - self.c_st <= self.n
    }
}

const SMALL_FACTORIALS: usize = 32;

fn small_ln_factorials() -> &'static [f64; SMALL_FACTORIALS] {
    static TABLE: OnceLock<[f64; SMALL_FACTORIALS]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; SMALL_FACTORIALS];
        let mut f = 1.0f64;
        for (k, slot) in t.iter_mut().enumerate().skip(1) {
            // k! is exact in f64 up to 22!, and within an ulp after that.
            f *= k as f64;
            *slot = f.ln();
        }
        t
    })
}

/// `ln k!` from a table for small `k` and the Stirling series of
/// `ln Γ(k + 1)` beyond.
pub fn ln_factorial(k: u64) -> f64 {
    if (k as usize) < SMALL_FACTORIALS {
        return small_ln_factorials()[k as usize];
    }
    let z = k as f64 + 1.0;
    let z2 = z * z;
    let series = 1.0 / (12.0 * z) - 1.0 / (360.0 * z * z2) + 1.0 / (1260.0 * z * z2 * z2)
        - 1.0 / (1680.0 * z * z2 * z2 * z2);
    (z - 0.5) * z.ln() - z + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Terms closer to the running sum than this (in log units) are still added.
const TAIL_CUTOFF: f64 = 45.0;

/// `ln Σ exp(terms)` for terms that decrease along the iteration order.
fn ln_sum_decreasing(terms: impl Iterator<Item = f64>) -> f64 {
    let mut first = None;
    let mut scaled = 0.0f64;
    for t in terms {
        let head = *first.get_or_insert(t);
        let rel = t - head;
        if rel < -TAIL_CUTOFF - scaled.ln().max(0.0) {
            break;
        }
        scaled += rel.exp();
    }
    match first {
        Some(head) => head + scaled.ln(),
        None => f64::NEG_INFINITY,
    }
}

/// `-ln p` for the right-tail Fisher exact test,
/// `p = Σ_{k ≥ c_st} C(c_s, k) C(n − c_s, c_t − k) / C(n, c_t)`.
///
/// The side of the distribution away from the mode is summed, giving full
/// relative precision both for tiny p and for p close to one.
pub fn fisher_neg_log_p(ct: &ContingencyTable) -> Result<f64, PruneError> {
    if !ct.is_valid() {
        return Err(PruneError::Domain(*ct));
    }
    let ContingencyTable { c_s, c_t, c_st, n } = *ct;
    if c_s == 1 && c_t == 1 {
        return Ok((n as f64).ln());
    }
    let k_min = (c_s + c_t).saturating_sub(n);
    let k_max = c_s.min(c_t);
    if c_st <= k_min {
        return Ok(0.0);
    }
    let denom = ln_choose(n, c_t);
    let term = |k: u64| ln_choose(c_s, k) + ln_choose(n - c_s, c_t - k) - denom;
    let mode = ((c_s + 1) as u128 * (c_t + 1) as u128 / (n + 2) as u128) as u64;
    if c_st > mode {
        let ln_p = ln_sum_decreasing((c_st..=k_max).map(term));
        Ok((-ln_p).max(0.0))
    } else {
        let ln_q = ln_sum_decreasing((k_min..c_st).rev().map(term));
        Ok((-(-ln_q.exp()).ln_1p()).max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ThresholdMode {
    Alpha,
    #[default]
    AlphaPlusEpsilon,
    Custom(f64),
}

impl ThresholdMode {
    /// `alpha`, `alpha+e` or a non-negative number.
    pub fn parse(s: &str) -> Result<Self, PruneError> {
        match s.trim() {
            "alpha" => Ok(ThresholdMode::Alpha),
            "alpha+e" | "alpha+eps" | "alpha+epsilon" => Ok(ThresholdMode::AlphaPlusEpsilon),
            other => match other.parse::<f64>() {
                Ok(v) if v >= 0.0 && v.is_finite() => Ok(ThresholdMode::Custom(v)),
                _ => Err(PruneError::Threshold(s.to_string())),
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            ThresholdMode::Alpha => "alpha".into(),
            ThresholdMode::AlphaPlusEpsilon => "alpha+e".into(),
            ThresholdMode::Custom(v) => format!("{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    pub mode: ThresholdMode,
    pub epsilon: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            mode: ThresholdMode::AlphaPlusEpsilon,
            epsilon: 1e-9,
        }
    }
}

/// The `-ln p` threshold an entry must exceed to survive.
pub fn threshold_for(mode: ThresholdMode, n: u64, epsilon: f64) -> f64 {
    let alpha = (n.max(1) as f64).ln();
    match mode {
        ThresholdMode::Alpha => alpha,
        ThresholdMode::AlphaPlusEpsilon => alpha + epsilon,
        ThresholdMode::Custom(v) => v,
    }
}

/// Inverted index from token to the sorted ids of sentences containing it.
struct SideIndex<'a> {
    postings: HashMap<&'a str, Vec<u32>>,
    sentences: Vec<&'a [String]>,
}

impl<'a> SideIndex<'a> {
    fn new(sentences: Vec<&'a [String]>) -> Self {
        let mut postings: HashMap<&'a str, Vec<u32>> = HashMap::new();
        for (i, s) in sentences.iter().enumerate() {
            for tok in s.iter() {
                let list = postings.entry(tok.as_str()).or_default();
                if list.last() != Some(&(i as u32)) {
                    list.push(i as u32);
                }
            }
        }
        SideIndex {
            postings,
            sentences,
        }
    }

    /// Sorted ids of sentences containing `phrase` contiguously.
    fn containing(&self, phrase: &[String]) -> Vec<u32> {
        let Some(rarest) = phrase
            .iter()
            .map(|t| self.postings.get(t.as_str()))
            .min_by_key(|p| p.map_or(0, |v| v.len()))
            .flatten()
        else {
            return Vec::new();
        };
        rarest
            .iter()
            .copied()
            .filter(|&id| {
                self.sentences[id as usize]
                    .windows(phrase.len())
                    .any(|w| w == phrase)
            })
            .collect()
    }
}

fn intersection_len(a: &[u32], b: &[u32]) -> u64 {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Contingency tables for every entry, in table order. The corpus source
/// side is the foreign side.
pub fn contingency_counts(
    table: &PhraseTable,
    corpus: &AlignedCorpus,
) -> Result<Vec<ContingencyTable>, PruneError> {
    let foreign = SideIndex::new(corpus.pairs.iter().map(|p| &p.src[..]).collect());
    let english = SideIndex::new(corpus.pairs.iter().map(|p| &p.tgt[..]).collect());

    let mut foreign_phrases: Vec<&Vec<String>> = table.entries().iter().map(|e| &e.foreign).collect();
    foreign_phrases.sort();
    foreign_phrases.dedup();
    let english_phrases = table.english_phrases();

    let f_occ: HashMap<&Vec<String>, Vec<u32>> = foreign_phrases
        .par_iter()
        .map(|p| (*p, foreign.containing(p)))
        .collect();
    let e_occ: HashMap<&Vec<String>, Vec<u32>> = english_phrases
        .par_iter()
        .map(|p| (*p, english.containing(p)))
        .collect();
    let n = corpus.len() as u64;

    table
        .entries()
        .par_iter()
        .map(|e| {
            let fs = &f_occ[&e.foreign];
            let es = &e_occ[&e.english];
            let ct = ContingencyTable::new(fs.len() as u64, es.len() as u64, intersection_len(fs, es), n);
            if ct.c_st == 0 {
                return Err(PruneError::Inconsistent {
                    foreign: e.foreign.join(" "),
                    english: e.english.join(" "),
                });
            }
            Ok(ct)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneRow {
    pub foreign: String,
    pub english: String,
    pub counts: ContingencyTable,
    pub neg_log_p: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PruneReport {
    pub threshold: f64,
    pub rows: Vec<PruneRow>,
    pub kept: usize,
    pub pruned: usize,
}

impl PruneReport {
    /// `foreign ||| english \t c_s \t c_t \t c_st \t neg_log_p \t kept|pruned`
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{} ||| {}\t{}\t{}\t{}\t{}\t{}",
                r.foreign,
                r.english,
                r.counts.c_s,
                r.counts.c_t,
                r.counts.c_st,
                crate::fmt::significant(r.neg_log_p, 8),
                if r.kept { "kept" } else { "pruned" }
            );
        }
        out
    }
}

/// Keeps the entries whose `-ln p` exceeds the configured threshold. Surviving
/// entries are copied unchanged.
pub fn prune(
    table: &PhraseTable,
    counts: &[ContingencyTable],
    config: &PruneConfig,
) -> Result<(PhraseTable, PruneReport), PruneError> {
    if counts.len() != table.len() {
        return Err(PruneError::CountMismatch {
            counts: counts.len(),
            entries: table.len(),
        });
    }
    let threshold = threshold_for(config.mode, table.corpus_size() as u64, config.epsilon);
    let scores: Vec<f64> = counts
        .par_iter()
        .map(fisher_neg_log_p)
        .collect::<Result<_, _>>()?;
    let mut report = PruneReport {
        threshold,
        ..Default::default()
    };
    let mut kept = Vec::new();
    for ((entry, ct), score) in table.entries().iter().zip(counts).zip(scores) {
        let keep = score > threshold;
        report.rows.push(PruneRow {
            foreign: entry.foreign.join(" "),
            english: entry.english.join(" "),
            counts: *ct,
            neg_log_p: score,
            kept: keep,
        });
        if keep {
            kept.push(entry.clone());
        }
    }
    report.kept = kept.len();
    report.pruned = table.len() - kept.len();
    Ok((PhraseTable::new(kept, table.corpus_size()), report))
}
