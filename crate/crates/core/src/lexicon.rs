//! Discourse-marker lexicon: candidate selection from a phrase table,
//! filtering, and the multilingual lexicon with its exports.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::fmt::significant;
use crate::ingest::{is_punctuation_token, normalize_line};
use crate::phrase_table::{PhraseTable, PhraseTableEntry};

/// Seed markers shipped with the crate.
pub const SAMPLE_MARKERS: &str = include_str!("../data/sample_markers.txt");

#[derive(Debug, Error, PartialEq)]
pub enum LexiconError {
    #[error("seed marker list is empty")]
    NoSeeds,
    #[error("unknown export format {0:?}; expected tsv or json")]
    Format(String),
    #[error("invalid filter policy: {0}")]
    Policy(String),
    #[error("malformed lexicon document: {0}")]
    Parse(String),
}

/// Ordered, deduplicated, tokenized and lowercased English markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedMarkerList {
    markers: Vec<Vec<String>>,
}

impl SeedMarkerList {
    pub fn markers(&self) -> &[Vec<String>] {
        &self.markers
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    pub fn sample() -> Self {
        load_seed_markers(SAMPLE_MARKERS).expect("bundled marker list is non-empty")
    }
}

/// One marker per line; blank lines and `#` comments are skipped.
pub fn load_seed_markers(text: &str) -> Result<SeedMarkerList, LexiconError> {
    let mut seen = HashSet::new();
    let mut markers = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens = normalize_line(line);
        if !tokens.is_empty() && seen.insert(tokens.clone()) {
            markers.push(tokens);
        }
    }
    if markers.is_empty() {
        return Err(LexiconError::NoSeeds);
    }
    Ok(SeedMarkerList { markers })
}

/// Punctuation around the marker on the english side of a matched entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    None,
    Preceded,
    Followed,
    Both,
}

impl Context {
    pub fn label(&self) -> &'static str {
        match self {
            Context::None => "none",
            Context::Preceded => "preceded",
            Context::Followed => "followed",
            Context::Both => "both",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Some(match s {
            "none" => Context::None,
            "preceded" => Context::Preceded,
            "followed" => Context::Followed,
            "both" => Context::Both,
            _ => return None,
        })
    }

    /// Position of the first marker token within the english side.
    pub fn offset(&self) -> usize {
        match self {
            Context::Preceded | Context::Both => 1,
            Context::None | Context::Followed => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerCandidate {
    pub marker: Vec<String>,
    pub language: String,
    pub translation: Vec<String>,
    pub raw_entry: PhraseTableEntry,
    pub context: Context,
    pub score: f64,
}

/// How an english side relates to `marker`, if it is the marker alone or
/// with exactly one punctuation token on either or both sides.
pub fn match_context(english: &[String], marker: &[String]) -> Option<Context> {
    let m = marker.len();
    if m == 0 || english.len() < m || english.len() > m + 2 {
        return None;
    }
    let punct = |i: usize| is_punctuation_token(&english[i]);
    match english.len() - m {
        0 => (english == marker).then_some(Context::None),
        1 => {
            if &english[..m] == marker && punct(m) {
                Some(Context::Followed)
            } else if &english[1..] == marker && punct(0) {
                Some(Context::Preceded)
            } else {
                None
            }
        }
        _ => (&english[1..=m] == marker && punct(0) && punct(m + 1)).then_some(Context::Both),
    }
}

/// Entries whose english side is `marker`, optionally wrapped in single
/// punctuation tokens. The translation is the raw foreign side; scores are
/// filled in by [`filter_candidates`].
pub fn select_candidates(table: &PhraseTable, marker: &[String], language: &str) -> Vec<MarkerCandidate> {
    let mut out = Vec::new();
    for english in table.english_phrases() {
        let Some(context) = match_context(english, marker) else {
            continue;
        };
        for entry in table.with_english(english) {
            out.push(MarkerCandidate {
                marker: marker.to_vec(),
                language: language.to_string(),
                translation: entry.foreign.clone(),
                raw_entry: entry.clone(),
                context,
                score: 0.0,
            });
        }
    }
    out
}

/// Drops leading and trailing punctuation tokens from the translation.
pub fn strip_punctuation_context(mut candidate: MarkerCandidate) -> MarkerCandidate {
    let t = &candidate.translation;
    let start = t.iter().position(|tok| !is_punctuation_token(tok)).unwrap_or(t.len());
    let end = t.iter().rposition(|tok| !is_punctuation_token(tok)).map_or(start, |i| i + 1);
    candidate.translation = t[start..end].to_vec();
    candidate
}

/// Each check is skipped when its field is `None` (or the flag is off).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPolicy {
    pub min_dir_phrase_prob: Option<f64>,
    pub min_inv_phrase_prob: Option<f64>,
    pub min_joint_count: Option<u64>,
    pub max_length_delta: Option<usize>,
    pub require_full_marker_alignment: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_dir_phrase_prob: Some(0.05),
            min_inv_phrase_prob: Some(0.05),
            min_joint_count: Some(2),
            max_length_delta: Some(3),
            require_full_marker_alignment: true,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), LexiconError> {
        for (name, p) in [
            ("min_dir_phrase_prob", self.min_dir_phrase_prob),
            ("min_inv_phrase_prob", self.min_inv_phrase_prob),
        ] {
            if let Some(p) = p {
                if !(0.0..=1.0).contains(&p) {
                    return Err(LexiconError::Policy(format!("{name} = {p} is outside [0, 1]")));
                }
            }
        }
        if self.min_joint_count == Some(0) {
            return Err(LexiconError::Policy("min_joint_count must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether a (stripped) candidate passes every enabled check.
    pub fn accepts(&self, c: &MarkerCandidate) -> bool {
        let e = &c.raw_entry;
        if c.translation.is_empty() || c.translation.iter().all(|t| is_punctuation_token(t)) {
            return false;
        }
        if self.min_dir_phrase_prob.is_some_and(|m| e.dir_phrase_prob < m)
            || self.min_inv_phrase_prob.is_some_and(|m| e.inv_phrase_prob < m)
            || self.min_joint_count.is_some_and(|m| e.joint_count < m as f64)
            || self
                .max_length_delta
                .is_some_and(|d| c.translation.len().abs_diff(c.marker.len()) > d)
        {
            return false;
        }
        if self.require_full_marker_alignment {
            let offset = c.context.offset();
            let linked: HashSet<usize> = e.alignment.links.iter().map(|&(_, en)| en).collect();
            if !(offset..offset + c.marker.len()).all(|i| linked.contains(&i)) {
                return false;
            }
        }
        true
    }
}

/// Strips, scores (φ(e|f) · φ(f|e)), applies the policy, and merges
/// duplicates of (marker, language, translation) keeping the best score; the
/// earlier candidate wins a tie. Survivors keep their first-seen order.
pub fn filter_candidates(candidates: Vec<MarkerCandidate>, policy: &FilterPolicy) -> Vec<MarkerCandidate> {
    let mut out: Vec<MarkerCandidate> = Vec::new();
    let mut slot: HashMap<(Vec<String>, String, Vec<String>), usize> = HashMap::new();
    for c in candidates {
        let mut c = strip_punctuation_context(c);
        if !policy.accepts(&c) {
            continue;
        }
        c.score = c.raw_entry.dir_phrase_prob * c.raw_entry.inv_phrase_prob;
        let key = (c.marker.clone(), c.language.clone(), c.translation.clone());
        match slot.get(&key) {
            Some(&i) => {
                if c.score > out[i].score {
                    out[i] = c;
                }
            }
            None => {
                slot.insert(key, out.len());
                out.push(c);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub translation: Vec<String>,
    pub score: f64,
    pub joint_count: f64,
    pub context: Context,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconEntry {
    pub marker: Vec<String>,
    /// Language code to translations by descending score, ties lexicographic.
    pub languages: BTreeMap<String, Vec<Translation>>,
}

/// Entries in seed order; markers without translations keep an empty map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lexicon {
    pub entries: Vec<LexiconEntry>,
}

fn rank(list: &mut [Translation]) {
    list.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.translation.cmp(&b.translation))
    });
}

/// Groups filtered candidates by marker and language. Candidates for markers
/// outside the seed list are ignored.
pub fn build_lexicon(seeds: &SeedMarkerList, per_language: &BTreeMap<String, Vec<MarkerCandidate>>) -> Lexicon {
    let mut entries: Vec<LexiconEntry> = seeds
        .markers()
        .iter()
        .map(|m| LexiconEntry {
            marker: m.clone(),
            languages: BTreeMap::new(),
        })
        .collect();
    let index: HashMap<&Vec<String>, usize> = seeds.markers().iter().enumerate().map(|(i, m)| (m, i)).collect();
    for (language, candidates) in per_language {
        for c in candidates {
            let Some(&i) = index.get(&c.marker) else {
                continue;
            };
            let list = entries[i].languages.entry(language.clone()).or_default();
            match list.iter_mut().find(|t| t.translation == c.translation) {
                Some(t) if c.score > t.score => {
                    *t = translation_of(c);
                }
                Some(_) => {}
                None => list.push(translation_of(c)),
            }
        }
    }
    for e in &mut entries {
        for list in e.languages.values_mut() {
            rank(list);
        }
    }
    Lexicon { entries }
}

fn translation_of(c: &MarkerCandidate) -> Translation {
    Translation {
        translation: c.translation.clone(),
        score: c.score,
        joint_count: c.raw_entry.joint_count,
        context: c.context,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Tsv,
    Structured,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Result<Self, LexiconError> {
        match s {
            "tsv" => Ok(ExportFormat::Tsv),
            "json" | "structured" => Ok(ExportFormat::Structured),
            other => Err(LexiconError::Format(other.to_string())),
        }
    }
}

pub const TSV_HEADER: &str = "marker\tlanguage\ttranslation\tscore\tjoint_count";

impl Lexicon {
    /// Number of (marker, language, translation) rows.
    pub fn translation_count(&self) -> usize {
        self.entries
            .iter()
            .flat_map(|e| e.languages.values())
            .map(Vec::len)
            .sum()
    }

    pub fn get(&self, marker: &str, language: &str) -> Option<&[Translation]> {
        self.entries
            .iter()
            .find(|e| e.marker.join(" ") == marker)
            .and_then(|e| e.languages.get(language))
            .map(Vec::as_slice)
    }

    pub fn export(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::Tsv => self.to_tsv(),
            ExportFormat::Structured => self.to_json(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            for (language, list) in &e.languages {
                for t in list {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}",
                        e.marker.join(" "),
                        language,
                        t.translation.join(" "),
                        significant(t.score, 6),
                        t.joint_count
                    );
                }
            }
        }
        out
    }

    /// Markers at the top level in seed order, then languages, then ranked
    /// translation records.
    pub fn to_json(&self) -> String {
        let mut root = Map::new();
        for e in &self.entries {
            let mut langs = Map::new();
            for (language, list) in &e.languages {
                let records: Vec<Value> = list
                    .iter()
                    .map(|t| {
                        json!({
                            "translation": t.translation.join(" "),
                            "score": t.score,
                            "joint_count": t.joint_count,
                            "context": t.context.label(),
                        })
                    })
                    .collect();
                langs.insert(language.clone(), Value::Array(records));
            }
            root.insert(e.marker.join(" "), Value::Object(langs));
        }
        let mut s = serde_json::to_string_pretty(&Value::Object(root)).expect("json values serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let bad = |m: &str| LexiconError::Parse(m.to_string());
        let root: Value = serde_json::from_str(text).map_err(|e| LexiconError::Parse(e.to_string()))?;
        let root = root.as_object().ok_or_else(|| bad("top level is not an object"))?;
        let mut entries = Vec::new();
        for (marker, langs) in root {
            let langs = langs.as_object().ok_or_else(|| bad("marker value is not an object"))?;
            let mut languages = BTreeMap::new();
            for (language, list) in langs {
                let list = list.as_array().ok_or_else(|| bad("language value is not an array"))?;
                let mut out = Vec::new();
                for r in list {
                    let field = |k: &str| r.get(k).ok_or_else(|| bad(&format!("record without {k}")));
                    let words = |s: &str| s.split(' ').filter(|w| !w.is_empty()).map(String::from).collect();
                    out.push(Translation {
                        translation: words(field("translation")?.as_str().ok_or_else(|| bad("translation"))?),
                        score: field("score")?.as_f64().ok_or_else(|| bad("score"))?,
                        joint_count: field("joint_count")?.as_f64().ok_or_else(|| bad("joint_count"))?,
                        context: Context::from_label(field("context")?.as_str().unwrap_or(""))
                            .ok_or_else(|| bad("context"))?,
                    });
                }
                languages.insert(language.clone(), out);
            }
            entries.push(LexiconEntry {
                marker: marker.split(' ').map(String::from).collect(),
                languages,
            });
        }
        Ok(Lexicon { entries })
    }
}
