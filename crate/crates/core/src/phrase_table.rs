//! Phrase-pair extraction and scoring.
//!
//! Phrase pairs are read off word-aligned sentence pairs under the usual
//! consistency criterion, then scored with relative-frequency phrase
//! probabilities in both directions and lexical weights from the word tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt::significant;
use crate::word_align::{TranslationTable, WordAlignment};

pub const DEFAULT_MAX_PHRASE_LEN: usize = 7;

#[derive(Debug, Error, PartialEq)]
pub enum PhraseTableError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("corpus has {pairs} sentence pairs but {alignments} alignments")]
    AlignmentCount { pairs: usize, alignments: usize },
}

/// One phrase pair read off one sentence pair. The alignment is re-based so
/// that positions start at zero within each phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhrasePairInstance {
    pub foreign: Vec<String>,
    pub english: Vec<String>,
    pub alignment: WordAlignment,
    pub origin: usize,
}

/// Span pairs `(foreign, english)` consistent with `alignment`, each at most
/// `max_len` long. Links are (foreign position, english position).
pub fn consistent_spans(
    foreign_len: usize,
    english_len: usize,
    alignment: &WordAlignment,
    max_len: usize,
) -> Vec<(Range<usize>, Range<usize>)> {
    let mut out = Vec::new();
    if alignment.is_empty() || max_len == 0 {
        return out;
    }
    let mut foreign_aligned = vec![false; foreign_len];
    for &(f, _) in &alignment.links {
        foreign_aligned[f] = true;
    }
    for es in 0..english_len {
        for ee in es..english_len.min(es + max_len) {
            let mut fmin = usize::MAX;
            let mut fmax = 0;
            for &(f, e) in &alignment.links {
                if (es..=ee).contains(&e) {
                    fmin = fmin.min(f);
                    fmax = fmax.max(f);
                }
            }
            if fmin == usize::MAX || fmax - fmin + 1 > max_len {
                continue;
            }
            let leaks = alignment
                .links
                .iter()
                .any(|&(f, e)| (fmin..=fmax).contains(&f) && !(es..=ee).contains(&e));
            if leaks {
                continue;
            }
            // Grow over unaligned foreign words on either edge.
            let mut fs = fmin;
            loop {
                let mut fe = fmax;
                loop {
                    out.push((fs..fe + 1, es..ee + 1));
                    fe += 1;
                    if fe >= foreign_len || foreign_aligned[fe] || fe - fs + 1 > max_len {
                        break;
                    }
                }
                if fs == 0 || foreign_aligned[fs - 1] || fmax - (fs - 1) + 1 > max_len {
                    break;
                }
                fs -= 1;
            }
        }
    }
    out
}

fn rebase(alignment: &WordAlignment, f: &Range<usize>, e: &Range<usize>) -> WordAlignment {
    WordAlignment::from_links(
        alignment
            .links
            .iter()
            .filter(|(fi, ei)| f.contains(fi) && e.contains(ei))
            .map(|&(fi, ei)| (fi - f.start, ei - e.start)),
    )
}

/// All consistent phrase pairs of one sentence pair.
pub fn extract_phrase_pairs(
    foreign: &[String],
    english: &[String],
    alignment: &WordAlignment,
    max_len: usize,
) -> Vec<PhrasePairInstance> {
    consistent_spans(foreign.len(), english.len(), alignment, max_len)
        .into_iter()
        .map(|(f, e)| PhrasePairInstance {
            foreign: foreign[f.clone()].to_vec(),
            english: english[e.clone()].to_vec(),
            alignment: rebase(alignment, &f, &e),
            origin: 0,
        })
        .collect()
}

/// Extracts from every sentence pair, in corpus order.
pub fn extract_corpus(
    pairs: &[(&[String], &[String])],
    alignments: &[WordAlignment],
    max_len: usize,
) -> Result<Vec<PhrasePairInstance>, PhraseTableError> {
    if pairs.len() != alignments.len() {
        return Err(PhraseTableError::AlignmentCount {
            pairs: pairs.len(),
            alignments: alignments.len(),
        });
    }
    let per_pair: Vec<Vec<PhrasePairInstance>> = pairs
        .par_iter()
        .zip(alignments.par_iter())
        .enumerate()
        .map(|(i, ((f, e), a))| {
            let mut v = extract_phrase_pairs(f, e, a, max_len);
            for inst in &mut v {
                inst.origin = i;
            }
            v
        })
        .collect();
    Ok(per_pair.into_iter().flatten().collect())
}

/// `lex(e|f)`: for every english word, the mean of `w(e | f)` over its linked
/// foreign words (or `w(e | NULL)` when unlinked), multiplied together.
/// Links are (foreign position, english position).
pub fn lexical_weight(
    english: &[String],
    foreign: &[String],
    alignment: &WordAlignment,
    english_given_foreign: &TranslationTable,
) -> f64 {
    let mut linked: Vec<Vec<usize>> = vec![Vec::new(); english.len()];
    for &(f, e) in &alignment.links {
        linked[e].push(f);
    }
    english
        .iter()
        .zip(&linked)
        .map(|(e, fs)| {
            if fs.is_empty() {
                english_given_foreign.null_prob_or_floor(e)
            } else {
                let total: f64 = fs
                    .iter()
                    .map(|&f| english_given_foreign.prob_or_floor(&foreign[f], e))
                    .sum();
                total / fs.len() as f64
            }
        })
        .product()
}

/// `lex(f|e)`, the same weighting with the roles of the two sides swapped.
pub fn inverse_lexical_weight(
    foreign: &[String],
    english: &[String],
    alignment: &WordAlignment,
    foreign_given_english: &TranslationTable,
) -> f64 {
    let transposed = WordAlignment::from_links(alignment.links.iter().map(|&(f, e)| (e, f)));
    lexical_weight(foreign, english, &transposed, foreign_given_english)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseTableEntry {
    pub foreign: Vec<String>,
    pub english: Vec<String>,
    /// φ(f|e)
    pub inv_phrase_prob: f64,
    /// lex(f|e)
    pub inv_lex_weight: f64,
    /// φ(e|f)
    pub dir_phrase_prob: f64,
    /// lex(e|f)
    pub dir_lex_weight: f64,
    #[serde(with = "pharaoh")]
    pub alignment: WordAlignment,
    pub joint_count: f64,
}

mod pharaoh {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::word_align::WordAlignment;

    pub fn serialize<S: Serializer>(a: &WordAlignment, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&a.to_pharaoh())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<WordAlignment, D::Error> {
        let s = String::deserialize(d)?;
        WordAlignment::parse_pharaoh(&s).ok_or_else(|| serde::de::Error::custom("bad alignment"))
    }
}

/// Scored phrase pairs sorted by foreign then english phrase, with lookup by
/// either side.
#[derive(Debug, Clone, Default)]
pub struct PhraseTable {
    entries: Vec<PhraseTableEntry>,
    corpus_size: usize,
    by_foreign: HashMap<Vec<String>, Vec<usize>>,
    by_english: HashMap<Vec<String>, Vec<usize>>,
}

impl PartialEq for PhraseTable {
    fn eq(&self, other: &Self) -> bool {
        self.corpus_size == other.corpus_size && self.entries == other.entries
    }
}

impl PhraseTable {
    pub fn new(mut entries: Vec<PhraseTableEntry>, corpus_size: usize) -> Self {
        entries.sort_by(|a, b| (&a.foreign, &a.english).cmp(&(&b.foreign, &b.english)));
        let mut by_foreign: HashMap<Vec<String>, Vec<usize>> = HashMap::new();
        let mut by_english: HashMap<Vec<String>, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_foreign.entry(e.foreign.clone()).or_default().push(i);
            by_english.entry(e.english.clone()).or_default().push(i);
        }
        PhraseTable {
            entries,
            corpus_size,
            by_foreign,
            by_english,
        }
    }

    pub fn entries(&self) -> &[PhraseTableEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<PhraseTableEntry> {
        self.entries
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, foreign: &[String], english: &[String]) -> Option<&PhraseTableEntry> {
        self.by_foreign
            .get(foreign)?
            .iter()
            .map(|&i| &self.entries[i])
            .find(|e| e.english == english)
    }

    pub fn with_english<'a>(&'a self, english: &[String]) -> impl Iterator<Item = &'a PhraseTableEntry> {
        self.by_english
            .get(english)
            .into_iter()
            .flatten()
            .map(|&i| &self.entries[i])
    }

    pub fn with_foreign<'a>(&'a self, foreign: &[String]) -> impl Iterator<Item = &'a PhraseTableEntry> {
        self.by_foreign
            .get(foreign)
            .into_iter()
            .flatten()
            .map(|&i| &self.entries[i])
    }

    /// Distinct english phrases in sorted order.
    pub fn english_phrases(&self) -> Vec<&Vec<String>> {
        let mut v: Vec<&Vec<String>> = self.by_english.keys().collect();
        v.sort();
        v
    }

    /// Largest deviation from one of Σ_f φ(f|e) over all e, and of Σ_e φ(e|f)
    /// over all f.
    pub fn normalization_error(&self) -> (f64, f64) {
        let dev = |index: &HashMap<Vec<String>, Vec<usize>>, get: fn(&PhraseTableEntry) -> f64| {
            index
                .values()
                .map(|ids| (ids.iter().map(|&i| get(&self.entries[i])).sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max)
        };
        (
            dev(&self.by_english, |e| e.inv_phrase_prob),
            dev(&self.by_foreign, |e| e.dir_phrase_prob),
        )
    }

    /// Text format: a `# N=<n>` header, then one
    /// `f ||| e ||| φ(f|e) lex(f|e) φ(e|f) lex(e|f) ||| links ||| count` line
    /// per entry.
    pub fn to_text(&self) -> String {
        let mut out = format!("# N={}\n", self.corpus_size);
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{} ||| {} ||| {} {} {} {} ||| {} ||| {}",
                e.foreign.join(" "),
                e.english.join(" "),
                significant(e.inv_phrase_prob, 8),
                significant(e.inv_lex_weight, 8),
                significant(e.dir_phrase_prob, 8),
                significant(e.dir_lex_weight, 8),
                e.alignment.to_pharaoh(),
                significant(e.joint_count, 8),
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PhraseTableError> {
        let mut corpus_size = None;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |reason: &str| PhraseTableError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(n) = rest.trim().strip_prefix("N=") {
                    corpus_size = Some(n.trim().parse().map_err(|_| err("bad corpus size"))?);
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(" ||| ").collect();
            if fields.len() != 5 {
                return Err(err("expected 5 fields separated by ' ||| '"));
            }
            let toks = |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_string).collect() };
            let scores: Vec<f64> = fields[2]
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| err("bad score"))?;
            if scores.len() != 4 {
                return Err(err("expected 4 scores"));
            }
            if scores.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
                return Err(err("score outside (0, 1]"));
            }
            let alignment = WordAlignment::parse_pharaoh(fields[3]).ok_or_else(|| err("bad alignment"))?;
            let joint_count: f64 = fields[4].trim().parse().map_err(|_| err("bad count"))?;
            let entry = PhraseTableEntry {
                foreign: toks(fields[0]),
                english: toks(fields[1]),
                inv_phrase_prob: scores[0],
                inv_lex_weight: scores[1],
                dir_phrase_prob: scores[2],
                dir_lex_weight: scores[3],
                alignment,
                joint_count,
            };
            if entry.foreign.is_empty() || entry.english.is_empty() {
                return Err(err("empty phrase"));
            }
            entries.push(entry);
        }
        let corpus_size = corpus_size.ok_or(PhraseTableError::Parse {
            line: 1,
            reason: "missing '# N=' header".into(),
        })?;
        Ok(PhraseTable::new(entries, corpus_size))
    }
}

/// Scores grouped instances. `foreign_given_english` supplies `w(f|e)` for
/// lex(f|e); `english_given_foreign` supplies `w(e|f)` for lex(e|f).
pub fn score_phrase_table(
    instances: &[PhrasePairInstance],
    foreign_given_english: &TranslationTable,
    english_given_foreign: &TranslationTable,
    corpus_size: usize,
) -> PhraseTable {
    type Key = (Vec<String>, Vec<String>);
    let mut joint: BTreeMap<Key, (u64, BTreeMap<WordAlignment, u64>)> = BTreeMap::new();
    let mut foreign_counts: HashMap<&[String], u64> = HashMap::new();
    let mut english_counts: HashMap<&[String], u64> = HashMap::new();
    for inst in instances {
        let slot = joint
            .entry((inst.foreign.clone(), inst.english.clone()))
            .or_default();
        slot.0 += 1;
        *slot.1.entry(inst.alignment.clone()).or_default() += 1;
        *foreign_counts.entry(&inst.foreign).or_default() += 1;
        *english_counts.entry(&inst.english).or_default() += 1;
    }
    let entries: Vec<PhraseTableEntry> = joint
        .into_iter()
        .map(|((foreign, english), (count, alignments))| {
            // Most frequent alignment; the BTreeMap yields the smallest first,
            // and only a strictly larger count replaces it.
            let mut best: Option<(&WordAlignment, u64)> = None;
            for (a, &c) in &alignments {
                if best.is_none_or(|(_, bc)| c > bc) {
                    best = Some((a, c));
                }
            }
            let alignment = best.expect("at least one instance").0.clone();
            let fc = foreign_counts[&foreign[..]] as f64;
            let ec = english_counts[&english[..]] as f64;
            let count = count as f64;
            PhraseTableEntry {
                inv_phrase_prob: count / ec,
                inv_lex_weight: inverse_lexical_weight(
                    &foreign,
                    &english,
                    &alignment,
                    foreign_given_english,
                ),
                dir_phrase_prob: count / fc,
                dir_lex_weight: lexical_weight(&english, &foreign, &alignment, english_given_foreign),
                foreign,
                english,
                alignment,
                joint_count: count,
            }
        })
        .collect();
    PhraseTable::new(entries, corpus_size)
}
