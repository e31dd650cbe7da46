//! Stage orchestration with content-digest caching.
//!
//! Layout under the output directory:
//!
//! ```text
//! ingest/<lang>/           tokenized documents, one <file-id>.tok each
//! <f>-<e>/align/           source.txt, target.txt, provenance.tsv, warnings.txt
//! <f>-<e>/wordalign/       translation tables, symmetrized alignment, log-likelihoods
//! <f>-<e>/phrases/         phrase-table.txt
//! <f>-<e>/prune/           phrase-table.pruned.txt, prune-report.tsv
//! <f>-<e>/markers/         candidates.json
//! lexicon/                 lexicon.tsv, lexicon.json
//! report.txt, report.json
//! ```
//!
//! Every stage directory holds an `artifact.json` with the digest of the
//! stage's input bytes, the digest of its canonical parameters and the digest
//! of every output. A stage is skipped when all of them still match.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::{pair_documents, parse_europarl_bytes, Document};
use crate::lexicon::{build_lexicon, filter_candidates, load_seed_markers, select_candidates, FilterPolicy, MarkerCandidate, SAMPLE_MARKERS};
use crate::phrase_table::{extract_corpus, score_phrase_table, PhraseTable, DEFAULT_MAX_PHRASE_LEN};
use crate::prune::{contingency_counts, prune, PruneConfig, ThresholdMode};
use crate::sentence_align::{align_corpus, AlignedCorpus, AlignerParams, DeletionPolicy, EmissionPolicy, MultiBeadPolicy};
use crate::word_align::{symmetrize, train_model1, viterbi_align, Heuristic, Model1Config, TranslationTable, WordAlignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Align,
    WordAlign,
    Phrases,
    Prune,
    Markers,
    Lexicon,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Align,
        Stage::WordAlign,
        Stage::Phrases,
        Stage::Prune,
        Stage::Markers,
        Stage::Lexicon,
    ];
    pub const PAIR: [Stage; 5] = [Stage::Align, Stage::WordAlign, Stage::Phrases, Stage::Prune, Stage::Markers];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Align => "align",
            Stage::WordAlign => "wordalign",
            Stage::Phrases => "phrases",
            Stage::Prune => "prune",
            Stage::Markers => "markers",
            Stage::Lexicon => "lexicon",
        }
    }
}

/// Every problem found in a configuration, not just the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub errors: Vec<String>,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus_root: PathBuf,
    pub english: String,
    pub foreign: Vec<String>,
    /// File ids (without `.txt`); all files of the English directory when unset.
    pub files: Option<Vec<String>>,
    pub output_dir: PathBuf,
    pub aligner: AlignerParams,
    pub emission: EmissionPolicy,
    pub model1: Model1Config,
    pub heuristic: Heuristic,
    pub max_phrase_len: usize,
    pub prune: PruneConfig,
    /// Seed marker file; the bundled sample list when unset.
    pub seeds: Option<PathBuf>,
    pub filter: FilterPolicy,
    pub cache: bool,
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
}

impl PipelineConfig {
    /// A configuration with every default filled in.
    pub fn with_defaults(corpus_root: PathBuf, english: &str, foreign: &[&str]) -> Self {
        PipelineConfig {
            corpus_root,
            english: english.to_string(),
            foreign: foreign.iter().map(|s| s.to_string()).collect(),
            files: None,
            output_dir: PathBuf::from("output"),
            aligner: AlignerParams::default(),
            emission: EmissionPolicy::default(),
            model1: Model1Config::default(),
            heuristic: Heuristic::default(),
            max_phrase_len: DEFAULT_MAX_PHRASE_LEN,
            prune: PruneConfig::default(),
            seeds: None,
            filter: FilterPolicy::default(),
            cache: true,
            jobs: 0,
        }
    }

    pub fn language_dir(&self, language: &str) -> PathBuf {
        self.corpus_root.join(language)
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "corpus.root",
    "corpus.english",
    "corpus.foreign",
    "corpus.files",
    "output.dir",
    "aligner.mean_char_ratio",
    "aligner.variance",
    "aligner.priors",
    "aligner.multi",
    "aligner.deletions",
    "wordalign.iterations",
    "wordalign.prob_floor",
    "wordalign.null",
    "wordalign.heuristic",
    "phrases.max_len",
    "prune.mode",
    "prune.epsilon",
    "markers.seeds",
    "filter.min_dir_phrase_prob",
    "filter.min_inv_phrase_prob",
    "filter.min_joint_count",
    "filter.max_length_delta",
    "filter.require_full_marker_alignment",
    "cache",
    "jobs",
];

fn split_list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

/// `off` disables an optional check.
fn parse_optional<T: std::str::FromStr>(v: &str) -> Option<Option<T>> {
    if v == "off" || v == "none" {
        Some(None)
    } else {
        v.parse().ok().map(Some)
    }
}

/// Parses `key = value` lines. Relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<PipelineConfig, ConfigError> {
    let mut errors = Vec::new();
    let mut values: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("line {n}: expected `key = value`"));
            continue;
        };
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            errors.push(format!("line {n}: unknown key `{key}`"));
            continue;
        }
        if values.insert(key.to_string(), (n, value.trim().to_string())).is_some() {
            errors.push(format!("line {n}: duplicate key `{key}`"));
        }
    }

    let mut cfg = PipelineConfig::with_defaults(PathBuf::new(), "en", &[]);
    let get = |k: &str| values.get(k).map(|(n, v)| (*n, v.as_str()));
    let resolve = |v: &str| {
        let p = PathBuf::from(v);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    macro_rules! field {
        ($key:expr, $parse:expr, $what:expr, |$v:ident| $apply:expr) => {
            if let Some((n, raw)) = get($key) {
                match $parse(raw) {
                    Some($v) => $apply,
                    None => errors.push(format!("line {n}: `{}` expects {}, got `{raw}`", $key, $what)),
                }
            }
        };
    }

    match get("corpus.root") {
        Some((_, v)) => cfg.corpus_root = resolve(v),
        None => errors.push("missing required key `corpus.root`".into()),
    }
    if let Some((_, v)) = get("corpus.english") {
        cfg.english = v.to_string();
    }
    match get("corpus.foreign") {
        Some((_, v)) => cfg.foreign = split_list(v),
        None => errors.push("missing required key `corpus.foreign`".into()),
    }
    if let Some((_, v)) = get("corpus.files") {
        cfg.files = Some(split_list(v));
    }
    if let Some((_, v)) = get("output.dir") {
        cfg.output_dir = resolve(v);
    } else {
        cfg.output_dir = base.join("output");
    }

    let mut ratio = cfg.aligner.mean_char_ratio;
    let mut variance = cfg.aligner.variance;
    let mut priors = cfg.aligner.priors();
    field!("aligner.mean_char_ratio", |s: &str| s.parse::<f64>().ok(), "a number", |v| ratio = v);
    field!("aligner.variance", |s: &str| s.parse::<f64>().ok(), "a number", |v| variance = v);
    field!(
        "aligner.priors",
        |s: &str| {
            let v: Vec<f64> = split_list(s).iter().filter_map(|x| x.parse().ok()).collect();
            <[f64; 6]>::try_from(v).ok().filter(|_| split_list(s).len() == 6)
        },
        "six comma-separated numbers (1-1, 1-0, 0-1, 2-1, 1-2, 2-2)",
        |v| priors = v
    );
    match AlignerParams::new(ratio, variance, priors) {
        Ok(p) => cfg.aligner = p,
        Err(e) => errors.push(e.to_string()),
    }
    field!(
        "aligner.multi",
        |s: &str| match s {
            "concatenate" => Some(MultiBeadPolicy::Concatenate),
            "drop" => Some(MultiBeadPolicy::Drop),
            _ => None,
        },
        "concatenate or drop",
        |v| cfg.emission.multi = v
    );
    field!(
        "aligner.deletions",
        |s: &str| match s {
            "drop" => Some(DeletionPolicy::Drop),
            "attach" => Some(DeletionPolicy::AttachToNeighbour),
            _ => None,
        },
        "drop or attach",
        |v| cfg.emission.deletions = v
    );

    field!(
        "wordalign.iterations",
        |s: &str| s.parse::<usize>().ok().filter(|&n| n > 0),
        "a positive integer",
        |v| cfg.model1.iterations = v
    );
    field!(
        "wordalign.prob_floor",
        |s: &str| s.parse::<f64>().ok().filter(|&p| p > 0.0 && p < 1.0),
        "a number in (0, 1)",
        |v| cfg.model1.prob_floor = v
    );
    field!("wordalign.null", parse_bool, "true or false", |v| cfg.model1.use_null = v);
    field!(
        "wordalign.heuristic",
        Heuristic::parse,
        "intersection, union or grow-diag-final-and",
        |v| cfg.heuristic = v
    );
    field!(
        "phrases.max_len",
        |s: &str| s.parse::<usize>().ok().filter(|&n| n > 0),
        "a positive integer",
        |v| cfg.max_phrase_len = v
    );
    field!(
        "prune.mode",
        |s: &str| ThresholdMode::parse(s).ok(),
        "alpha, alpha+e or a non-negative number",
        |v| cfg.prune.mode = v
    );
    field!(
        "prune.epsilon",
        |s: &str| s.parse::<f64>().ok().filter(|&e| e > 0.0 && e.is_finite()),
        "a positive number",
        |v| cfg.prune.epsilon = v
    );
    if let Some((_, v)) = get("markers.seeds") {
        cfg.seeds = Some(resolve(v));
    }
    field!(
        "filter.min_dir_phrase_prob",
        parse_optional::<f64>,
        "a probability or off",
        |v| cfg.filter.min_dir_phrase_prob = v
    );
    field!(
        "filter.min_inv_phrase_prob",
        parse_optional::<f64>,
        "a probability or off",
        |v| cfg.filter.min_inv_phrase_prob = v
    );
    field!(
        "filter.min_joint_count",
        parse_optional::<u64>,
        "a count or off",
        |v| cfg.filter.min_joint_count = v
    );
    field!(
        "filter.max_length_delta",
        parse_optional::<usize>,
        "a token count or off",
        |v| cfg.filter.max_length_delta = v
    );
    field!(
        "filter.require_full_marker_alignment",
        parse_bool,
        "true or false",
        |v| cfg.filter.require_full_marker_alignment = v
    );
    if let Err(e) = cfg.filter.validate() {
        errors.push(e.to_string());
    }
    field!("cache", parse_bool, "true or false", |v| cfg.cache = v);
    field!("jobs", |s: &str| s.parse::<usize>().ok(), "a non-negative integer", |v| cfg.jobs = v);

    errors.extend(check_config(&cfg));
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { errors })
    }
}

/// Language and filesystem checks.
pub fn check_config(cfg: &PipelineConfig) -> Vec<String> {
    let mut errors = Vec::new();
    if cfg.foreign.is_empty() && !cfg.corpus_root.as_os_str().is_empty() {
        errors.push("`corpus.foreign` lists no languages".into());
    }
    if cfg.foreign.contains(&cfg.english) {
        errors.push(format!("English code `{}` also listed as a foreign language", cfg.english));
    }
    let mut seen = HashSet::new();
    for f in &cfg.foreign {
        if !seen.insert(f) {
            errors.push(format!("foreign language `{f}` listed twice"));
        }
    }
    if cfg.corpus_root.as_os_str().is_empty() {
        return errors;
    }
    if !cfg.corpus_root.is_dir() {
        errors.push(format!("corpus root {} does not exist", cfg.corpus_root.display()));
        return errors;
    }
    for lang in std::iter::once(&cfg.english).chain(&cfg.foreign) {
        let dir = cfg.language_dir(lang);
        if !dir.is_dir() {
            errors.push(format!("corpus directory {} does not exist", dir.display()));
            continue;
        }
        if let Some(files) = &cfg.files {
            for id in files {
                let p = dir.join(format!("{id}.txt"));
                if !p.is_file() {
                    errors.push(format!("corpus file {} does not exist", p.display()));
                }
            }
        }
    }
    if let Some(seeds) = &cfg.seeds {
        if !seeds.is_file() {
            errors.push(format!("seed marker file {} does not exist", seeds.display()));
        }
    }
    errors
}

/// Reads and validates a configuration file.
pub fn validate_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        errors: vec![format!("cannot read config {}: {e}", path.display())],
    })?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of named byte strings, order-sensitive and unambiguous.
pub fn digest_inputs(inputs: &[(String, Vec<u8>)]) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in inputs {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageArtifact {
    pub stage: String,
    pub input_digest: String,
    pub param_digest: String,
    /// Output file name to digest of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub stats: BTreeMap<String, u64>,
}

pub const ARTIFACT_FILE: &str = "artifact.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Computed,
    Cached,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub stats: BTreeMap<String, u64>,
    pub wall_ms: u64,
    pub error: Option<String>,
}

struct StageOutput {
    files: Vec<(String, Vec<u8>)>,
    stats: BTreeMap<String, u64>,
}

fn stats<const N: usize>(items: [(&str, usize); N]) -> BTreeMap<String, u64> {
    items.iter().map(|(k, v)| (k.to_string(), *v as u64)).collect()
}

fn read_inputs(files: &[(String, PathBuf)]) -> Result<Vec<(String, Vec<u8>)>> {
    files
        .iter()
        .map(|(name, path)| {
            fs::read(path)
                .with_context(|| format!("missing input {}", path.display()))
                .map(|b| (name.clone(), b))
        })
        .collect()
}

fn cached_artifact(dir: &Path, stage: &str, input_digest: &str, param_digest: &str) -> Option<StageArtifact> {
    let text = fs::read_to_string(dir.join(ARTIFACT_FILE)).ok()?;
    let art: StageArtifact = serde_json::from_str(&text).ok()?;
    if art.stage != stage || art.input_digest != input_digest || art.param_digest != param_digest {
        return None;
    }
    for (name, digest) in &art.outputs {
        let bytes = fs::read(dir.join(name)).ok()?;
        if &sha256_hex(&bytes) != digest {
            return None;
        }
    }
    Some(art)
}

/// Runs one stage in `dir`, or reuses its outputs when the cached artifact
/// matches the inputs and parameters.
fn run_stage(
    dir: &Path,
    stage: &str,
    inputs: &[(String, PathBuf)],
    params: &str,
    use_cache: bool,
    compute: impl FnOnce(&[(String, Vec<u8>)]) -> Result<StageOutput>,
) -> StageRecord {
    let start = Instant::now();
    let mut record = StageRecord {
        stage: stage.to_string(),
        status: StageStatus::Failed,
        input_bytes: 0,
        output_bytes: 0,
        stats: BTreeMap::new(),
        wall_ms: 0,
        error: None,
    };
    let result = (|| -> Result<(StageStatus, StageArtifact)> {
        let data = read_inputs(inputs)?;
        record.input_bytes = data.iter().map(|(_, b)| b.len() as u64).sum();
        let input_digest = digest_inputs(&data);
        let param_digest = sha256_hex(params.as_bytes());
        if use_cache {
            if let Some(art) = cached_artifact(dir, stage, &input_digest, &param_digest) {
                return Ok((StageStatus::Cached, art));
            }
        }
        let out = compute(&data)?;
        if dir.exists() {
            fs::remove_dir_all(dir).with_context(|| format!("cannot clear {}", dir.display()))?;
        }
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut outputs = BTreeMap::new();
        for (name, bytes) in &out.files {
            fs::write(dir.join(name), bytes).with_context(|| format!("cannot write {name}"))?;
            outputs.insert(name.clone(), sha256_hex(bytes));
        }
        let art = StageArtifact {
            stage: stage.to_string(),
            input_digest,
            param_digest,
            outputs,
            stats: out.stats,
        };
        let mut json = serde_json::to_string_pretty(&art)?;
        json.push('\n');
        fs::write(dir.join(ARTIFACT_FILE), json)?;
        Ok((StageStatus::Computed, art))
    })();
    match result {
        Ok((status, art)) => {
            record.status = status;
            record.output_bytes = art
                .outputs
                .keys()
                .filter_map(|n| fs::metadata(dir.join(n)).ok())
                .map(|m| m.len())
                .sum();
            record.stats = art.stats;
        }
        Err(e) => record.error = Some(format!("{e:#}")),
    }
    record.wall_ms = start.elapsed().as_millis() as u64;
    record
}

fn skipped(stage: Stage, reason: &str) -> StageRecord {
    StageRecord {
        stage: stage.name().to_string(),
        status: StageStatus::Skipped,
        input_bytes: 0,
        output_bytes: 0,
        stats: BTreeMap::new(),
        wall_ms: 0,
        error: Some(reason.to_string()),
    }
}

fn utf8(bytes: &[u8], name: &str) -> Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|e| anyhow!("{name}: invalid UTF-8 at byte {}", e.utf8_error().valid_up_to()))
}

/// Ordered view over a stage's input bytes.
struct Inputs<'a>(HashMap<&'a str, &'a [u8]>);

impl<'a> Inputs<'a> {
    fn new(data: &'a [(String, Vec<u8>)]) -> Self {
        Inputs(data.iter().map(|(n, b)| (n.as_str(), b.as_slice())).collect())
    }

    fn text(&self, name: &str) -> Result<String> {
        utf8(self.0.get(name).ok_or_else(|| anyhow!("input {name} not provided"))?, name)
    }
}

fn text_file(name: &str, s: String) -> (String, Vec<u8>) {
    (name.to_string(), s.into_bytes())
}

/// File ids of `dir/*.<ext>`, sorted.
fn list_ids(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageReport {
    pub language: String,
    pub stage: StageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pair: String,
    pub failed: bool,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub ingest: Vec<LanguageReport>,
    pub pairs: Vec<PairReport>,
    pub lexicon: Option<StageRecord>,
}

impl RunReport {
    pub fn has_failures(&self) -> bool {
        self.ingest.iter().any(|l| l.stage.status == StageStatus::Failed)
            || self.pairs.iter().any(|p| p.failed)
            || self.lexicon.as_ref().is_some_and(|l| l.status == StageStatus::Failed)
    }

    /// Every stage record with its scope (`ingest/<lang>`, `<f>-<e>` or `lexicon`).
    pub fn records(&self) -> Vec<(String, &StageRecord)> {
        let mut out: Vec<(String, &StageRecord)> = self
            .ingest
            .iter()
            .map(|l| (format!("ingest/{}", l.language), &l.stage))
            .collect();
        for p in &self.pairs {
            out.extend(p.stages.iter().map(|s| (p.pair.clone(), s)));
        }
        if let Some(l) = &self.lexicon {
            out.push(("lexicon".into(), l));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (scope, r) in self.records() {
            let status = match r.status {
                StageStatus::Computed => "computed",
                StageStatus::Cached => "cached",
                StageStatus::Failed => "FAILED",
                StageStatus::Skipped => "skipped",
            };
            let stats: Vec<String> = r.stats.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = write!(
                out,
                "{scope:<14} {:<10} {status:<8} {:>7}ms  in={}B out={}B",
                r.stage, r.wall_ms, r.input_bytes, r.output_bytes
            );
            if !stats.is_empty() {
                let _ = write!(out, "  {}", stats.join(" "));
            }
            if let Some(e) = &r.error {
                let _ = write!(out, "  ({e})");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

const ALIGN_FILES: [&str; 3] = ["source.txt", "target.txt", "provenance.tsv"];
const T_FOREIGN_GIVEN_ENGLISH: &str = "t-foreign-given-english.tsv";
const T_ENGLISH_GIVEN_FOREIGN: &str = "t-english-given-foreign.tsv";
const ALIGNMENT_FILE: &str = "alignment.txt";
const PHRASE_TABLE_FILE: &str = "phrase-table.txt";
const PRUNED_TABLE_FILE: &str = "phrase-table.pruned.txt";
const CANDIDATES_FILE: &str = "candidates.json";

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Pipeline { config }
    }

    pub fn pair_name(&self, foreign: &str) -> String {
        format!("{foreign}-{}", self.config.english)
    }

    pub fn ingest_dir(&self, language: &str) -> PathBuf {
        self.config.output_dir.join("ingest").join(language)
    }

    pub fn stage_dir(&self, foreign: &str, stage: Stage) -> PathBuf {
        self.config.output_dir.join(self.pair_name(foreign)).join(stage.name())
    }

    pub fn lexicon_dir(&self) -> PathBuf {
        self.config.output_dir.join("lexicon")
    }

    fn seeds_input(&self) -> Result<(String, Vec<u8>)> {
        let bytes = match &self.config.seeds {
            Some(p) => fs::read(p).with_context(|| format!("cannot read seeds {}", p.display()))?,
            None => SAMPLE_MARKERS.as_bytes().to_vec(),
        };
        Ok(("seeds.txt".into(), bytes))
    }

    /// Runs the selected stages (all when `None`) and writes the report.
    pub fn run(&self, stages: Option<&[Stage]>) -> Result<RunReport> {
        let selected = |s: Stage| stages.is_none_or(|list| list.contains(&s));
        fs::create_dir_all(&self.config.output_dir)
            .with_context(|| format!("cannot create {}", self.config.output_dir.display()))?;
        let mut builder = rayon::ThreadPoolBuilder::new();
        if self.config.jobs > 0 {
            builder = builder.num_threads(self.config.jobs);
        }
        let pool = builder.build()?;
        let report = pool.install(|| {
            let mut report = RunReport::default();
            if selected(Stage::Ingest) {
                let languages: Vec<&String> = std::iter::once(&self.config.english).chain(&self.config.foreign).collect();
                report.ingest = languages
                    .par_iter()
                    .map(|l| LanguageReport {
                        language: l.to_string(),
                        stage: self.ingest(l),
                    })
                    .collect();
            }
            let failed_ingest: HashSet<&str> = report
                .ingest
                .iter()
                .filter(|l| l.stage.status == StageStatus::Failed)
                .map(|l| l.language.as_str())
                .collect();
            let pair_stages: Vec<Stage> = Stage::PAIR.into_iter().filter(|&s| selected(s)).collect();
            if !pair_stages.is_empty() {
                report.pairs = self
                    .config
                    .foreign
                    .par_iter()
                    .map(|f| {
                        let blocked = [f.as_str(), self.config.english.as_str()]
                            .into_iter()
                            .find(|l| failed_ingest.contains(l));
                        self.run_pair(f, &pair_stages, blocked)
                    })
                    .collect();
            }
            if selected(Stage::Lexicon) {
                report.lexicon = Some(self.lexicon(&report));
            }
            report
        });
        fs::write(self.config.output_dir.join("report.txt"), report.to_text())?;
        fs::write(self.config.output_dir.join("report.json"), report.to_json())?;
        Ok(report)
    }

    fn run_pair(&self, foreign: &str, stages: &[Stage], blocked: Option<&str>) -> PairReport {
        let mut report = PairReport {
            pair: self.pair_name(foreign),
            failed: false,
            stages: Vec::new(),
        };
        for &stage in stages {
            if let Some(lang) = blocked {
                report.failed = true;
                report.stages.push(skipped(stage, &format!("ingest failed for {lang}")));
                continue;
            }
            if report.failed {
                report.stages.push(skipped(stage, "an earlier stage failed"));
                continue;
            }
            let record = match stage {
                Stage::Align => self.align(foreign),
                Stage::WordAlign => self.word_align(foreign),
                Stage::Phrases => self.phrases(foreign),
                Stage::Prune => self.prune(foreign),
                Stage::Markers => self.markers(foreign),
                Stage::Ingest | Stage::Lexicon => unreachable!("not a pair stage"),
            };
            if record.status == StageStatus::Failed {
                log::error!("{} {}: {}", report.pair, record.stage, record.error.as_deref().unwrap_or(""));
                report.failed = true;
            } else {
                log::info!("{} {}: {:?}", report.pair, record.stage, record.status);
            }
            report.stages.push(record);
        }
        report
    }

    fn ingest(&self, language: &str) -> StageRecord {
        let dir = self.ingest_dir(language);
        let src = self.config.language_dir(language);
        let ids = match &self.config.files {
            Some(f) => Ok(f.clone()),
            None => list_ids(&src, "txt"),
        };
        let ids = match ids {
            Ok(ids) => ids,
            Err(e) => {
                let mut r = skipped(Stage::Ingest, &format!("{e:#}"));
                r.status = StageStatus::Failed;
                return r;
            }
        };
        let inputs: Vec<(String, PathBuf)> = ids.iter().map(|id| (id.clone(), src.join(format!("{id}.txt")))).collect();
        let lang = language.to_string();
        run_stage(&dir, Stage::Ingest.name(), &inputs, "tokenizer=1\n", self.config.cache, move |data| {
            let docs: Vec<Result<Document>> = data
                .par_iter()
                .map(|(id, bytes)| {
                    let raw = parse_europarl_bytes(id, bytes).map_err(|e| anyhow!("{lang}/{id}.txt: {e}"))?;
                    Ok(Document::from_raw(&raw, &lang))
                })
                .collect();
            let mut files = Vec::new();
            let (mut paragraphs, mut sentences) = (0, 0);
            for doc in docs {
                let doc = doc?;
                paragraphs += doc.paragraphs.len();
                sentences += doc.sentence_count();
                files.push(text_file(&format!("{}.tok", doc.file_id), doc.to_tokenized_text()));
            }
            let n = files.len();
            Ok(StageOutput {
                files,
                stats: stats([("files", n), ("paragraphs", paragraphs), ("sentences", sentences)]),
            })
        })
    }

    fn align(&self, foreign: &str) -> StageRecord {
        let english = &self.config.english;
        let fdir = self.ingest_dir(foreign);
        let edir = self.ingest_dir(english);
        let ids = (|| -> Result<Vec<String>> {
            let f: HashSet<String> = list_ids(&fdir, "tok")?.into_iter().collect();
            Ok(list_ids(&edir, "tok")?.into_iter().filter(|id| f.contains(id)).collect())
        })();
        let ids = match ids {
            Ok(ids) => ids,
            Err(e) => {
                let mut r = skipped(Stage::Align, &format!("{e:#} (run the ingest stage first)"));
                r.status = StageStatus::Failed;
                return r;
            }
        };
        let mut inputs = Vec::new();
        for id in &ids {
            inputs.push((format!("{foreign}/{id}.tok"), fdir.join(format!("{id}.tok"))));
            inputs.push((format!("{english}/{id}.tok"), edir.join(format!("{id}.tok"))));
        }
        let p = &self.config.aligner;
        let params = format!(
            "mean_char_ratio={:?}\nvariance={:?}\npriors={:?}\nemission={:?}\n",
            p.mean_char_ratio,
            p.variance,
            p.priors(),
            self.config.emission
        );
        run_stage(&self.stage_dir(foreign, Stage::Align), "align", &inputs, &params, self.config.cache, |data| {
            let mut paragraph_pairs = Vec::new();
            let mut warnings = String::new();
            let mut collapsed = 0;
            for pair in data.chunks(2) {
                let id = pair[0].0.split_once('/').map_or("", |(_, f)| f).trim_end_matches(".tok");
                let fdoc = Document::from_tokenized_text(id, foreign, &utf8(&pair[0].1, &pair[0].0)?);
                let edoc = Document::from_tokenized_text(id, english, &utf8(&pair[1].1, &pair[1].0)?);
                let pairing = pair_documents(&fdoc, &edoc);
                collapsed += pairing.collapsed as usize;
                for w in &pairing.warnings {
                    let _ = writeln!(warnings, "{w}");
                }
                paragraph_pairs.extend(pairing.pairs);
            }
            let corpus = align_corpus(&paragraph_pairs, &self.config.aligner, self.config.emission);
            if corpus.is_empty() {
                bail!("no sentence pairs were aligned");
            }
            let (src, tgt, prov) = corpus.to_parallel_text();
            Ok(StageOutput {
                files: vec![
                    text_file(ALIGN_FILES[0], src),
                    text_file(ALIGN_FILES[1], tgt),
                    text_file(ALIGN_FILES[2], prov),
                    text_file("warnings.txt", warnings),
                ],
                stats: stats([
                    ("documents", ids.len()),
                    ("paragraph_pairs", paragraph_pairs.len()),
                    ("collapsed_documents", collapsed),
                    ("sentence_pairs", corpus.len()),
                ]),
            })
        })
    }

    fn corpus_inputs(&self, foreign: &str) -> Vec<(String, PathBuf)> {
        let dir = self.stage_dir(foreign, Stage::Align);
        ALIGN_FILES.iter().map(|n| (n.to_string(), dir.join(n))).collect()
    }

    fn word_align(&self, foreign: &str) -> StageRecord {
        let m = &self.config.model1;
        let params = format!(
            "iterations={}\nprob_floor={:?}\nnull={}\nheuristic={}\n",
            m.iterations,
            m.prob_floor,
            m.use_null,
            self.config.heuristic.name()
        );
        let inputs = self.corpus_inputs(foreign);
        run_stage(&self.stage_dir(foreign, Stage::WordAlign), "wordalign", &inputs, &params, self.config.cache, |data| {
            let corpus = read_corpus(&Inputs::new(data))?;
            let f_given_e = train_model1(&corpus.tgt_src(), m)?;
            let e_given_f = train_model1(&corpus.src_tgt(), m)?;
            let alignments: Vec<WordAlignment> = corpus
                .pairs
                .par_iter()
                .map(|p| {
                    let foreign_side = viterbi_align(&p.tgt, &p.src, &f_given_e.table);
                    let english_side = viterbi_align(&p.src, &p.tgt, &e_given_f.table);
                    symmetrize(&foreign_side, &english_side, self.config.heuristic)
                })
                .collect::<Result<_, _>>()?;
            let mut align_text = String::new();
            for a in &alignments {
                align_text.push_str(&a.to_pharaoh());
                align_text.push('\n');
            }
            let mut ll = String::from("iteration\tforeign_given_english\tenglish_given_foreign\n");
            for (i, (a, b)) in f_given_e.log_likelihoods.iter().zip(&e_given_f.log_likelihoods).enumerate() {
                let _ = writeln!(ll, "{i}\t{}\t{}", crate::fmt::significant(*a, 12), crate::fmt::significant(*b, 12));
            }
            let links = alignments.iter().map(WordAlignment::len).sum();
            Ok(StageOutput {
                stats: stats([
                    ("sentence_pairs", corpus.len()),
                    ("links", links),
                    ("t_foreign_given_english", f_given_e.table.len()),
                    ("t_english_given_foreign", e_given_f.table.len()),
                ]),
                files: vec![
                    text_file(T_FOREIGN_GIVEN_ENGLISH, f_given_e.table.to_tsv()),
                    text_file(T_ENGLISH_GIVEN_FOREIGN, e_given_f.table.to_tsv()),
                    text_file(ALIGNMENT_FILE, align_text),
                    text_file("log-likelihood.tsv", ll),
                ],
            })
        })
    }

    fn phrases(&self, foreign: &str) -> StageRecord {
        let wa = self.stage_dir(foreign, Stage::WordAlign);
        let mut inputs = self.corpus_inputs(foreign);
        for n in [ALIGNMENT_FILE, T_FOREIGN_GIVEN_ENGLISH, T_ENGLISH_GIVEN_FOREIGN] {
            inputs.push((n.to_string(), wa.join(n)));
        }
        let floor = self.config.model1.prob_floor;
        let params = format!("max_len={}\nprob_floor={floor:?}\n", self.config.max_phrase_len);
        run_stage(&self.stage_dir(foreign, Stage::Phrases), "phrases", &inputs, &params, self.config.cache, |data| {
            let inputs = Inputs::new(data);
            let corpus = read_corpus(&inputs)?;
            let alignments: Vec<WordAlignment> = inputs
                .text(ALIGNMENT_FILE)?
                .lines()
                .enumerate()
                .map(|(i, l)| WordAlignment::parse_pharaoh(l).ok_or_else(|| anyhow!("{ALIGNMENT_FILE}:{}: bad alignment", i + 1)))
                .collect::<Result<_>>()?;
            let f_given_e = TranslationTable::from_tsv(&inputs.text(T_FOREIGN_GIVEN_ENGLISH)?, floor)?;
            let e_given_f = TranslationTable::from_tsv(&inputs.text(T_ENGLISH_GIVEN_FOREIGN)?, floor)?;
            let instances = extract_corpus(&corpus.src_tgt(), &alignments, self.config.max_phrase_len)?;
            let table = score_phrase_table(&instances, &f_given_e, &e_given_f, corpus.len());
            Ok(StageOutput {
                stats: stats([("instances", instances.len()), ("entries", table.len())]),
                files: vec![text_file(PHRASE_TABLE_FILE, table.to_text())],
            })
        })
    }

    fn prune(&self, foreign: &str) -> StageRecord {
        let mut inputs = self.corpus_inputs(foreign);
        inputs.push((PHRASE_TABLE_FILE.into(), self.stage_dir(foreign, Stage::Phrases).join(PHRASE_TABLE_FILE)));
        let cfg = self.config.prune;
        let params = format!("mode={}\nepsilon={:?}\n", cfg.mode.label(), cfg.epsilon);
        run_stage(&self.stage_dir(foreign, Stage::Prune), "prune", &inputs, &params, self.config.cache, |data| {
            let inputs = Inputs::new(data);
            let corpus = read_corpus(&inputs)?;
            let table = PhraseTable::from_text(&inputs.text(PHRASE_TABLE_FILE)?)?;
            let counts = contingency_counts(&table, &corpus)?;
            let (pruned, report) = prune(&table, &counts, &cfg)?;
            Ok(StageOutput {
                stats: stats([("entries", table.len()), ("kept", report.kept), ("pruned", report.pruned)]),
                files: vec![
                    text_file(PRUNED_TABLE_FILE, pruned.to_text()),
                    text_file("prune-report.tsv", report.to_tsv()),
                ],
            })
        })
    }

    fn markers(&self, foreign: &str) -> StageRecord {
        let seeds = match self.seeds_input() {
            Ok(s) => s,
            Err(e) => {
                let mut r = skipped(Stage::Markers, &format!("{e:#}"));
                r.status = StageStatus::Failed;
                return r;
            }
        };
        let inputs = vec![
            (PRUNED_TABLE_FILE.to_string(), self.stage_dir(foreign, Stage::Prune).join(PRUNED_TABLE_FILE)),
        ];
        let policy = self.config.filter.clone();
        let params = format!("language={foreign}\npolicy={policy:?}\nseeds={}\n", sha256_hex(&seeds.1));
        run_stage(&self.stage_dir(foreign, Stage::Markers), "markers", &inputs, &params, self.config.cache, |data| {
            let seeds = load_seed_markers(&utf8(&seeds.1, "seeds")?)?;
            let table = PhraseTable::from_text(&Inputs::new(data).text(PRUNED_TABLE_FILE)?)?;
            let per_marker: Vec<(usize, Vec<MarkerCandidate>)> = seeds
                .markers()
                .par_iter()
                .map(|m| {
                    let selected = select_candidates(&table, m, foreign);
                    let n = selected.len();
                    (n, filter_candidates(selected, &policy))
                })
                .collect();
            let selected: usize = per_marker.iter().map(|(n, _)| n).sum();
            let with_translation = per_marker.iter().filter(|(_, c)| !c.is_empty()).count();
            let kept: Vec<MarkerCandidate> = per_marker.into_iter().flat_map(|(_, c)| c).collect();
            let mut json = serde_json::to_string_pretty(&kept)?;
            json.push('\n');
            Ok(StageOutput {
                stats: stats([
                    ("seeds", seeds.len()),
                    ("selected", selected),
                    ("kept", kept.len()),
                    ("markers_with_translation", with_translation),
                ]),
                files: vec![text_file(CANDIDATES_FILE, json)],
            })
        })
    }

    fn lexicon(&self, report: &RunReport) -> StageRecord {
        let seeds = match self.seeds_input() {
            Ok(s) => s,
            Err(e) => {
                let mut r = skipped(Stage::Lexicon, &format!("{e:#}"));
                r.status = StageStatus::Failed;
                return r;
            }
        };
        let failed: HashSet<&str> = report.pairs.iter().filter(|p| p.failed).map(|p| p.pair.as_str()).collect();
        let languages: Vec<&String> = self
            .config
            .foreign
            .iter()
            .filter(|f| !failed.contains(self.pair_name(f).as_str()))
            .collect();
        let inputs: Vec<(String, PathBuf)> = languages
            .iter()
            .map(|f| (f.to_string(), self.stage_dir(f, Stage::Markers).join(CANDIDATES_FILE)))
            .collect();
        let params = format!("languages={languages:?}\nseeds={}\n", sha256_hex(&seeds.1));
        run_stage(&self.lexicon_dir(), "lexicon", &inputs, &params, self.config.cache, |data| {
            let seeds = load_seed_markers(&utf8(&seeds.1, "seeds")?)?;
            let mut per_language = BTreeMap::new();
            for (language, bytes) in data {
                let candidates: Vec<MarkerCandidate> =
                    serde_json::from_slice(bytes).with_context(|| format!("{language}: bad candidate file"))?;
                per_language.insert(language.clone(), candidates);
            }
            let lexicon = build_lexicon(&seeds, &per_language);
            let gaps = lexicon.entries.iter().filter(|e| e.languages.is_empty()).count();
            Ok(StageOutput {
                stats: stats([
                    ("markers", lexicon.entries.len()),
                    ("languages", per_language.len()),
                    ("translations", lexicon.translation_count()),
                    ("markers_without_translation", gaps),
                ]),
                files: vec![
                    text_file("lexicon.tsv", lexicon.to_tsv()),
                    text_file("lexicon.json", lexicon.to_json()),
                ],
            })
        })
    }
}

fn read_corpus(inputs: &Inputs) -> Result<AlignedCorpus> {
    Ok(AlignedCorpus::from_parallel_text(
        &inputs.text(ALIGN_FILES[0])?,
        &inputs.text(ALIGN_FILES[1])?,
        &inputs.text(ALIGN_FILES[2])?,
    )?)
}
