//! Length-based sentence alignment inside paired paragraphs.
//!
//! Each candidate bead (a group of 0–2 source sentences against 0–2 target
//! sentences) is scored by how far the target character length deviates from
//! the expected multiple of the source length, plus a prior on the bead shape.
//! A dynamic program picks the cheapest tiling of both paragraphs.

use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::ParagraphPair;
use crate::Sentence;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("length cost undefined when both sides are empty")]
    BothEmpty,
    #[error("invalid aligner parameters: {0}")]
    Params(String),
    #[error("malformed aligned corpus at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Bead shapes, declared in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BeadShape {
    OneOne,
    OneZero,
    ZeroOne,
    TwoOne,
    OneTwo,
    TwoTwo,
}

impl BeadShape {
    pub const ALL: [BeadShape; 6] = [
        BeadShape::OneOne,
        BeadShape::OneZero,
        BeadShape::ZeroOne,
        BeadShape::TwoOne,
        BeadShape::OneTwo,
        BeadShape::TwoTwo,
    ];

    /// (source sentences, target sentences)
    pub fn counts(self) -> (usize, usize) {
        match self {
            BeadShape::OneOne => (1, 1),
            BeadShape::OneZero => (1, 0),
            BeadShape::ZeroOne => (0, 1),
            BeadShape::TwoOne => (2, 1),
            BeadShape::OneTwo => (1, 2),
            BeadShape::TwoTwo => (2, 2),
        }
    }

    pub fn is_deletion(self) -> bool {
        matches!(self, BeadShape::OneZero | BeadShape::ZeroOne)
    }

    pub fn label(self) -> &'static str {
        match self {
            BeadShape::OneOne => "1-1",
            BeadShape::OneZero => "1-0",
            BeadShape::ZeroOne => "0-1",
            BeadShape::TwoOne => "2-1",
            BeadShape::OneTwo => "1-2",
            BeadShape::TwoTwo => "2-2",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.label() == label)
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Deviation charged to 1-0 and 0-1 beads, which have no length ratio.
pub const DELETION_DEVIATION: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignerParams {
    /// Expected target characters per source character.
    pub mean_char_ratio: f64,
    /// Variance of the length difference per source character.
    pub variance: f64,
    priors: [f64; 6],
}

impl Default for AlignerParams {
    fn default() -> Self {
        let raw = [0.89, 0.0099, 0.0099, 0.089 / 2.0, 0.089 / 2.0, 0.011];
        Self::new(1.0, 6.8, raw).expect("default parameters are valid")
    }
}

impl AlignerParams {
    /// Builds parameters, renormalizing `priors` (indexed in
    /// [`BeadShape::ALL`] order) to sum to one.
    pub fn new(mean_char_ratio: f64, variance: f64, priors: [f64; 6]) -> Result<Self, AlignError> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(AlignError::Params(format!("variance must be > 0, got {variance}")));
        }
        if !(mean_char_ratio > 0.0 && mean_char_ratio.is_finite()) {
            return Err(AlignError::Params(format!(
                "mean_char_ratio must be > 0, got {mean_char_ratio}"
            )));
        }
        if priors.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(AlignError::Params("bead priors must be positive".into()));
        }
        let total: f64 = priors.iter().sum();
        Ok(AlignerParams {
            mean_char_ratio,
            variance,
            priors: priors.map(|p| p / total),
        })
    }

    pub fn prior(&self, shape: BeadShape) -> f64 {
        self.priors[shape.index()]
    }

    pub fn priors(&self) -> [f64; 6] {
        self.priors
    }
}

/// `ln erfc(x)` for `x >= 0`, finite far into the tail.
fn ln_erfc(x: f64) -> f64 {
    if x < 5.0 {
        return libm::erfc(x).ln();
    }
    if x.is_infinite() {
        return f64::NEG_INFINITY;
    }
    // erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let mut tail = x;
    for n in (1..=60).rev() {
        tail = x + (n as f64 / 2.0) / tail;
    }
    -x * x - 0.5 * std::f64::consts::PI.ln() - tail.ln()
}

/// `-ln P(|Z| >= d)` for a standard normal `Z`, i.e. `-ln(2 (1 - Φ(d)))`.
pub fn neg_ln_two_tailed(deviation: f64) -> f64 {
    -ln_erfc(deviation.abs() / std::f64::consts::SQRT_2)
}

/// Cost of one bead in `-ln` probability units.
pub fn length_cost(
    src_len: usize,
    tgt_len: usize,
    shape: BeadShape,
    params: &AlignerParams,
) -> Result<f64, AlignError> {
    if src_len == 0 && tgt_len == 0 {
        return Err(AlignError::BothEmpty);
    }
    let deviation = if shape.is_deletion() {
        DELETION_DEVIATION
    } else if src_len == 0 {
        f64::INFINITY
    } else {
        let s = src_len as f64;
        (tgt_len as f64 - s * params.mean_char_ratio) / (s * params.variance).sqrt()
    };
    Ok(-params.prior(shape).ln() + neg_ln_two_tailed(deviation))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bead {
    pub src_span: Range<usize>,
    pub tgt_span: Range<usize>,
    pub shape: BeadShape,
    pub cost: f64,
}

/// Characters of the space-joined sentence.
pub fn sentence_char_len(sentence: &[String]) -> usize {
    sentence.iter().map(|t| t.chars().count()).sum::<usize>() + sentence.len().saturating_sub(1)
}

/// Aligns two sequences of sentence lengths. Ties between shapes at a cell go
/// to the shape listed first in [`BeadShape::ALL`].
pub fn align_lengths(src: &[usize], tgt: &[usize], params: &AlignerParams) -> Vec<Bead> {
    let (n, m) = (src.len(), tgt.len());
    if n == 0 && m == 0 {
        return Vec::new();
    }
    let width = m + 1;
    let mut best = vec![f64::INFINITY; (n + 1) * width];
    let mut back: Vec<Option<(BeadShape, f64)>> = vec![None; (n + 1) * width];
    best[0] = 0.0;

    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let mut cell = f64::INFINITY;
            let mut choice = None;
            for shape in BeadShape::ALL {
                let (a, b) = shape.counts();
                if a > i || b > j {
                    continue;
                }
                let prev = best[(i - a) * width + (j - b)];
                if !prev.is_finite() {
                    continue;
                }
                let sl: usize = src[i - a..i].iter().sum();
                let tl: usize = tgt[j - b..j].iter().sum();
                let cost = match length_cost(sl, tl, shape, params) {
                    Ok(c) => c,
                    Err(_) => continue,
                };
                let total = prev + cost;
                if total < cell {
                    cell = total;
                    choice = Some((shape, cost));
                }
            }
            best[i * width + j] = cell;
            back[i * width + j] = choice;
        }
    }

    let mut beads = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let (shape, cost) = back[i * width + j].expect("every cell is reachable");
        let (a, b) = shape.counts();
        beads.push(Bead {
            src_span: i - a..i,
            tgt_span: j - b..j,
            shape,
            cost,
        });
        i -= a;
        j -= b;
    }
    beads.reverse();
    beads
}

/// Aligns the sentences of one paragraph pair.
pub fn align_paragraph(src: &[Sentence], tgt: &[Sentence], params: &AlignerParams) -> Vec<Bead> {
    let src_lens: Vec<usize> = src.iter().map(|s| sentence_char_len(s)).collect();
    let tgt_lens: Vec<usize> = tgt.iter().map(|s| sentence_char_len(s)).collect();
    align_lengths(&src_lens, &tgt_lens, params)
}

/// Handling of 2-1, 1-2 and 2-2 beads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MultiBeadPolicy {
    /// Emit one pair, concatenating the sentences of the multi-sentence side.
    #[default]
    Concatenate,
    Drop,
}

/// Handling of 1-0 and 0-1 beads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeletionPolicy {
    #[default]
    Drop,
    /// Append the unmatched sentence to the preceding pair of the same
    /// paragraph (or prepend it to the following one when it comes first).
    AttachToNeighbour,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EmissionPolicy {
    pub multi: MultiBeadPolicy,
    pub deletions: DeletionPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub src: Sentence,
    pub tgt: Sentence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub file_id: String,
    pub paragraph: usize,
    pub bead: usize,
    pub shape: BeadShape,
}

/// Sentence pairs produced by alignment, with their origin.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignedCorpus {
    pub pairs: Vec<SentencePair>,
    pub provenance: Vec<Provenance>,
}

impl AlignedCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs as (source, target) slices.
    pub fn src_tgt(&self) -> Vec<(&[String], &[String])> {
        self.pairs.iter().map(|p| (&p.src[..], &p.tgt[..])).collect()
    }

    /// Pairs as (target, source) slices.
    pub fn tgt_src(&self) -> Vec<(&[String], &[String])> {
        self.pairs.iter().map(|p| (&p.tgt[..], &p.src[..])).collect()
    }

    /// Source text, target text and provenance sidecar.
    pub fn to_parallel_text(&self) -> (String, String, String) {
        let mut src = String::new();
        let mut tgt = String::new();
        let mut prov = String::new();
        for (i, (pair, p)) in self.pairs.iter().zip(&self.provenance).enumerate() {
            src.push_str(&pair.src.join(" "));
            src.push('\n');
            tgt.push_str(&pair.tgt.join(" "));
            tgt.push('\n');
            prov.push_str(&format!(
                "{i}\t{}\t{}\t{}\t{}\n",
                p.file_id,
                p.paragraph,
                p.shape.label(),
                p.bead
            ));
        }
        (src, tgt, prov)
    }

    pub fn from_parallel_text(src: &str, tgt: &str, prov: &str) -> Result<Self, AlignError> {
        let src: Vec<&str> = src.lines().collect();
        let tgt: Vec<&str> = tgt.lines().collect();
        let prov: Vec<&str> = prov.lines().collect();
        if src.len() != tgt.len() || src.len() != prov.len() {
            return Err(AlignError::Parse {
                line: src.len().min(tgt.len()).min(prov.len()) + 1,
                reason: format!(
                    "line counts differ: {} source, {} target, {} provenance",
                    src.len(),
                    tgt.len(),
                    prov.len()
                ),
            });
        }
        let mut corpus = AlignedCorpus::default();
        for (i, ((s, t), p)) in src.iter().zip(&tgt).zip(&prov).enumerate() {
            let err = |reason: &str| AlignError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let split = |l: &str| -> Sentence { l.split_whitespace().map(str::to_string).collect() };
            let pair = SentencePair {
                src: split(s),
                tgt: split(t),
            };
            if pair.src.is_empty() || pair.tgt.is_empty() {
                return Err(err("empty side"));
            }
            let fields: Vec<&str> = p.split('\t').collect();
            if fields.len() != 5 {
                return Err(err("provenance needs 5 tab-separated fields"));
            }
            let paragraph = fields[2].parse().map_err(|_| err("bad paragraph index"))?;
            let shape = BeadShape::from_label(fields[3]).ok_or_else(|| err("bad bead shape"))?;
            let bead = fields[4].parse().map_err(|_| err("bad bead index"))?;
            corpus.pairs.push(pair);
            corpus.provenance.push(Provenance {
                file_id: fields[1].to_string(),
                paragraph,
                bead,
                shape,
            });
        }
        Ok(corpus)
    }
}

fn emit_paragraph(
    pair: &ParagraphPair,
    beads: &[Bead],
    policy: EmissionPolicy,
) -> Vec<(SentencePair, Provenance)> {
    let mut out: Vec<(SentencePair, Provenance)> = Vec::new();
    let mut pending_src: Sentence = Vec::new();
    let mut pending_tgt: Sentence = Vec::new();
    for (b, bead) in beads.iter().enumerate() {
        let src: Sentence = pair.src_paragraph[bead.src_span.clone()].concat();
        let tgt: Sentence = pair.tgt_paragraph[bead.tgt_span.clone()].concat();
        if bead.shape.is_deletion() {
            if policy.deletions == DeletionPolicy::AttachToNeighbour {
                match out.last_mut() {
                    Some((last, _)) => {
                        last.src.extend(src);
                        last.tgt.extend(tgt);
                    }
                    None => {
                        pending_src.extend(src);
                        pending_tgt.extend(tgt);
                    }
                }
            }
            continue;
        }
        if bead.shape != BeadShape::OneOne && policy.multi == MultiBeadPolicy::Drop {
            continue;
        }
        let mut sp = SentencePair { src, tgt };
        if !pending_src.is_empty() || !pending_tgt.is_empty() {
            pending_src.append(&mut sp.src);
            pending_tgt.append(&mut sp.tgt);
            sp = SentencePair {
                src: std::mem::take(&mut pending_src),
                tgt: std::mem::take(&mut pending_tgt),
            };
        }
        out.push((
            sp,
            Provenance {
                file_id: pair.file_id.clone(),
                paragraph: pair.pair_index,
                bead: b,
                shape: bead.shape,
            },
        ));
    }
    out
}

/// Aligns every paragraph pair and collects the emitted sentence pairs in
/// input order.
pub fn align_corpus(
    pairs: &[ParagraphPair],
    params: &AlignerParams,
    policy: EmissionPolicy,
) -> AlignedCorpus {
    let per_paragraph: Vec<Vec<(SentencePair, Provenance)>> = pairs
        .par_iter()
        .map(|p| {
            let beads = align_paragraph(&p.src_paragraph, &p.tgt_paragraph, params);
            emit_paragraph(p, &beads, policy)
        })
        .collect();
    let mut corpus = AlignedCorpus::default();
    for (pair, prov) in per_paragraph.into_iter().flatten() {
        corpus.pairs.push(pair);
        corpus.provenance.push(prov);
    }
    corpus
}
