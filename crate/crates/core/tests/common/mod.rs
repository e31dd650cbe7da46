#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dmlex::sentence_align::{length_cost, AlignerParams, BeadShape};
use dmlex::word_align::WordAlignment;

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

// ---------------------------------------------------------------------------
// Exact hypergeometric tail

fn binom(n: u64, k: u64) -> BigUint {
    let mut r = BigUint::one();
    for i in 0..k {
        r = r * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    r
}

fn ln_ratio(num: &BigUint, den: &BigUint) -> f64 {
    if num.is_zero() {
        return f64::NEG_INFINITY;
    }
    let top = |x: &BigUint| -> (f64, i64) {
        let shift = (x.bits() as i64 - 60).max(0);
        ((x >> shift as u64).to_f64().unwrap(), shift)
    };
    let (a, sa) = top(num);
    let (b, sb) = top(den);
    (a / b).ln() + (sa - sb) as f64 * std::f64::consts::LN_2
}

/// `-ln P(K >= c_st)` from exact integer sums, converting through the
/// complement when the tail exceeds one half.
pub fn exact_neg_log_p(c_s: u64, c_t: u64, c_st: u64, n: u64) -> f64 {
    let den = binom(n, c_t);
    let mut tail = BigUint::zero();
    for k in c_st..=c_s.min(c_t) {
        if c_t - k <= n - c_s {
            tail += binom(c_s, k) * binom(n - c_s, c_t - k);
        }
    }
    if &tail * 2u32 <= den {
        -ln_ratio(&tail, &den)
    } else {
        let rest = &den - &tail;
        -(-ln_ratio(&rest, &den).exp()).ln_1p()
    }
}

// ---------------------------------------------------------------------------
// Exhaustive bead tilings

#[derive(Debug, Clone, PartialEq)]
pub struct Tiling {
    pub shapes: Vec<BeadShape>,
    /// Running cost after each bead, summed left to right.
    pub prefix_costs: Vec<f64>,
}

impl Tiling {
    pub fn cost(&self) -> f64 {
        self.prefix_costs.last().copied().unwrap_or(0.0)
    }
}

fn shape_rank(s: BeadShape) -> usize {
    BeadShape::ALL.iter().position(|&x| x == s).unwrap()
}

/// Order on tilings: total cost, then backwards from the last bead, the
/// earlier shape in tie order, then the cheaper prefix, and so on.
fn tiling_order(a_shapes: &[BeadShape], a_costs: &[f64], b: &Tiling) -> std::cmp::Ordering {
    let (mut i, mut j) = (a_shapes.len(), b.shapes.len());
    loop {
        let ca = if i == 0 { 0.0 } else { a_costs[i - 1] };
        let cb = if j == 0 { 0.0 } else { b.prefix_costs[j - 1] };
        let ord = ca.total_cmp(&cb);
        if ord.is_ne() {
            return ord;
        }
        if i == 0 || j == 0 {
            return i.cmp(&j);
        }
        let ord = shape_rank(a_shapes[i - 1]).cmp(&shape_rank(b.shapes[j - 1]));
        if ord.is_ne() {
            return ord;
        }
        i -= 1;
        j -= 1;
    }
}

/// Enumerates every covering of both length sequences by finite-cost beads
/// and returns the least one under [`tiling_order`] with the number visited.
pub fn min_tiling(src: &[usize], tgt: &[usize], params: &AlignerParams) -> (Option<Tiling>, u64) {
    struct Search<'a> {
        src: &'a [usize],
        tgt: &'a [usize],
        params: &'a AlignerParams,
        shapes: Vec<BeadShape>,
        costs: Vec<f64>,
        best: Option<Tiling>,
        count: u64,
    }
    fn go(s: &mut Search, i: usize, j: usize) {
        if i == s.src.len() && j == s.tgt.len() {
            s.count += 1;
            let better = match &s.best {
                None => true,
                Some(b) => tiling_order(&s.shapes, &s.costs, b).is_lt(),
            };
            if better {
                s.best = Some(Tiling {
                    shapes: s.shapes.clone(),
                    prefix_costs: s.costs.clone(),
                });
            }
            return;
        }
        for shape in BeadShape::ALL {
            let (a, b) = shape.counts();
            if i + a > s.src.len() || j + b > s.tgt.len() {
                continue;
            }
            let c = length_cost(
                s.src[i..i + a].iter().sum(),
                s.tgt[j..j + b].iter().sum(),
                shape,
                s.params,
            )
            .unwrap();
            if !c.is_finite() {
                continue;
            }
            let before = s.costs.last().copied().unwrap_or(0.0);
            s.shapes.push(shape);
            s.costs.push(before + c);
            go(s, i + a, j + b);
            s.shapes.pop();
            s.costs.pop();
        }
    }
    let mut s = Search {
        src,
        tgt,
        params,
        shapes: Vec::new(),
        costs: Vec::new(),
        best: None,
        count: 0,
    };
    go(&mut s, 0, 0);
    (s.best, s.count)
}

// ---------------------------------------------------------------------------
// Brute-force phrase consistency

/// `(f_start, f_end, e_start, e_end)` for every consistent span pair.
pub fn brute_force_spans(
    f_len: usize,
    e_len: usize,
    alignment: &WordAlignment,
    max_len: usize,
) -> BTreeSet<(usize, usize, usize, usize)> {
    let mut out = BTreeSet::new();
    for fs in 0..f_len {
        for fe in fs + 1..=(fs + max_len).min(f_len) {
            for es in 0..e_len {
                for ee in es + 1..=(es + max_len).min(e_len) {
                    let mut inside = false;
                    let mut ok = true;
                    for &(f, e) in &alignment.links {
                        let fin = (fs..fe).contains(&f);
                        let ein = (es..ee).contains(&e);
                        if fin && ein {
                            inside = true;
                        } else if fin != ein {
                            ok = false;
                            break;
                        }
                    }
                    if ok && inside {
                        out.insert((fs, fe, es, ee));
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Corpora on disk

/// Writes documents in Europarl layout: `<root>/<lang>/<id>.txt`, one speaker
/// turn per chapter, each inner `Vec` a paragraph of sentences.
pub fn write_europarl(root: &Path, lang: &str, id: &str, paragraphs: &[Vec<String>]) {
    let dir = root.join(lang);
    fs::create_dir_all(&dir).unwrap();
    let mut text = format!("<CHAPTER ID=1>\n<SPEAKER ID=1 NAME=\"President\" LANGUAGE=\"{}\">\n", lang.to_uppercase());
    for p in paragraphs {
        text.push_str("<P>\n");
        for s in p {
            text.push_str(s);
            text.push('\n');
        }
    }
    fs::write(dir.join(format!("{id}.txt")), text).unwrap();
}

pub fn write_config(dir: &Path, lines: &[String]) -> PathBuf {
    let path = dir.join("dmlex.conf");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

/// Planted marker translations per language.
pub struct Planted {
    pub markers: Vec<&'static str>,
    /// language → marker → planted translations, most frequent first.
    pub translations: BTreeMap<&'static str, BTreeMap<&'static str, Vec<&'static str>>>,
    pub sentence_pairs: usize,
    pub marker_occurrences: BTreeMap<&'static str, usize>,
    pub comma_initial: BTreeMap<&'static str, usize>,
}

const MARKERS: [(&str, [&[&str]; 2]); 10] = [
    ("above all", [&["sobretudo", "acima de tudo"], &["avant tout", "surtout"]]),
    ("since", [&["pois"], &["puisque"]]),
    ("however", [&["contudo", "no entanto"], &["cependant", "toutefois"]]),
    ("therefore", [&["portanto"], &["donc"]]),
    ("in short", [&["em suma"], &["bref"]]),
    ("meanwhile", [&["entretanto"], &["pendant ce temps"]]),
    ("finally", [&["finalmente", "enfim"], &["enfin"]]),
    ("because", [&["porque"], &["parce que"]]),
    ("as well", [&["também"], &["aussi"]]),
    ("on the other hand", [&["por outro lado"], &["d'autre part"]]),
];

const SUBJECTS: [[&str; 3]; 6] = [
    ["committee", "comité", "comité"],
    ["council", "conselho", "conseil"],
    ["parliament", "parlamento", "parlement"],
    ["commission", "comissão", "commission"],
    ["government", "governo", "gouvernement"],
    ["president", "presidente", "président"],
];

const VERBS: [[&str; 3]; 6] = [
    ["supports", "apoia", "soutient"],
    ["rejects", "rejeita", "rejette"],
    ["examines", "examina", "examine"],
    ["approves", "aprova", "approuve"],
    ["discusses", "discute", "discute"],
    ["defends", "defende", "défend"],
];

const OBJECTS: [[&str; 3]; 8] = [
    ["proposal", "proposta", "proposition"],
    ["report", "relatório", "rapport"],
    ["budget", "orçamento", "budget"],
    ["directive", "directiva", "directive"],
    ["agreement", "acordo", "accord"],
    ["programme", "programa", "programme"],
    ["text", "texto", "texte"],
    ["amendment", "alteração", "amendement"],
];

const ARTICLE: [&str; 3] = ["the", "o", "le"];

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Renders one clause per language from word indices.
fn clause(subject: usize, verb: usize, object: usize, lang: usize) -> String {
    format!(
        "{} {} {} {} {}",
        ARTICLE[lang], SUBJECTS[subject][lang], VERBS[verb][lang], ARTICLE[lang], OBJECTS[object][lang]
    )
}

/// Generates a template corpus for English plus `foreign` (any of `pt`, `fr`)
/// and writes it under `root`. Markers are sentence-initial and followed by a
/// comma in 60% of their occurrences.
pub fn write_synthetic_corpus(root: &Path, foreign: &[&str], pairs: usize, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let langs: Vec<(usize, &'static str)> = std::iter::once((0, "en"))
        .chain(foreign.iter().map(|&f| match f {
            "pt" => (1, "pt"),
            "fr" => (2, "fr"),
            other => panic!("no synthetic vocabulary for {other}"),
        }))
        .collect();
    let mut occurrences = BTreeMap::new();
    let mut comma_initial = BTreeMap::new();
    // sentences[lang][i]
    let mut sentences: Vec<Vec<String>> = vec![Vec::new(); langs.len()];
    for _ in 0..pairs {
        let (s1, v1, o1) = (rng.gen_range(0..6), rng.gen_range(0..6), rng.gen_range(0..8));
        let (s2, v2, o2) = (rng.gen_range(0..6), rng.gen_range(0..6), rng.gen_range(0..8));
        let with_marker = rng.gen_bool(0.65);
        let m = rng.gen_range(0..MARKERS.len());
        let variant_draw: f64 = rng.gen();
        // Per marker, occurrences cycle through comma-initial (3 of 5),
        // bare initial and medial positions.
        let mut style = 0.0;
        if with_marker {
            let seen = occurrences.entry(MARKERS[m].0).or_insert(0);
            style = [0.0, 0.7, 0.0, 0.9, 0.0][*seen % 5];
            *seen += 1;
            if style < 0.6 {
                *comma_initial.entry(MARKERS[m].0).or_insert(0) += 1;
            }
        }
        for (slot, &(li, _)) in langs.iter().enumerate() {
            let marker_text = |li: usize| -> String {
                if li == 0 {
                    return MARKERS[m].0.to_string();
                }
                let options = MARKERS[m].1[li - 1];
                let k = if options.len() > 1 && variant_draw >= 0.7 { 1 } else { 0 };
                options[k].to_string()
            };
            let text = if !with_marker {
                format!("{} .", capitalize(&clause(s1, v1, o1, li)))
            } else if style < 0.6 {
                format!("{} , {} .", capitalize(&marker_text(li)), clause(s1, v1, o1, li))
            } else if style < 0.8 {
                format!("{} {} .", capitalize(&marker_text(li)), clause(s1, v1, o1, li))
            } else {
                format!(
                    "{} {} {} .",
                    capitalize(&clause(s1, v1, o1, li)),
                    marker_text(li),
                    clause(s2, v2, o2, li)
                )
            };
            sentences[slot].push(text.replace(" ,", ",").replace(" .", "."));
        }
    }
    // Split into files of about 100 sentences and paragraphs of 1-4.
    let mut layout: Vec<Vec<usize>> = Vec::new();
    let mut i = 0;
    while i < pairs {
        let n = rng.gen_range(1..=4).min(pairs - i);
        layout.push((i..i + n).collect());
        i += n;
    }
    let per_file = 30;
    for (slot, &(_, lang)) in langs.iter().enumerate() {
        for (f, chunk) in layout.chunks(per_file).enumerate() {
            let paragraphs: Vec<Vec<String>> = chunk
                .iter()
                .map(|p| p.iter().map(|&k| sentences[slot][k].clone()).collect())
                .collect();
            write_europarl(root, lang, &format!("ep-{:02}", f + 1), &paragraphs);
        }
    }
    let mut translations = BTreeMap::new();
    for &(li, lang) in &langs[1..] {
        translations.insert(
            lang,
            MARKERS.iter().map(|(m, t)| (*m, t[li - 1].to_vec())).collect::<BTreeMap<_, _>>(),
        );
    }
    Planted {
        markers: MARKERS.iter().map(|(m, _)| *m).collect(),
        translations,
        sentence_pairs: pairs,
        marker_occurrences: occurrences,
        comma_initial,
    }
}

/// A short hand-written English/Portuguese corpus containing "above all" /
/// "sobretudo" and "since" / "pois".
pub const MINI_CORPUS: &[(&str, &str)] = &[
    ("Above all, we must protect the citizens.", "Sobretudo, temos de proteger os cidadãos."),
    ("Above all, the Commission must act.", "Sobretudo, a Comissão tem de agir."),
    ("Above all, the situation is serious.", "Sobretudo, a situação é grave."),
    ("Above all, the rules are clear.", "Sobretudo, as regras são claras."),
    ("I support this report, since it protects the citizens.", "Apoio este relatório, pois protege os cidadãos."),
    ("The Council must act, since the situation is serious.", "O Conselho tem de agir, pois a situação é grave."),
    ("We must act, since the citizens expect it.", "Temos de agir, pois os cidadãos esperam isso."),
    ("The report is clear, since the rules are clear.", "O relatório é claro, pois as regras são claras."),
    ("The Commission supports the report.", "A Comissão apoia o relatório."),
    ("The rules protect the citizens.", "As regras protegem os cidadãos."),
    ("The situation is serious.", "A situação é grave."),
    ("We support the Commission.", "Apoiamos a Comissão."),
    ("The Council supports the citizens.", "O Conselho apoia os cidadãos."),
    ("We must protect the rules.", "Temos de proteger as regras."),
];

pub fn write_mini_corpus(root: &Path) {
    let en: Vec<Vec<String>> = MINI_CORPUS.iter().map(|(e, _)| vec![e.to_string()]).collect();
    let pt: Vec<Vec<String>> = MINI_CORPUS.iter().map(|(_, p)| vec![p.to_string()]).collect();
    write_europarl(root, "en", "ep-mini", &en);
    write_europarl(root, "pt", "ep-mini", &pt);
}

/// Relative path → bytes for every file under `dir`, skipping run reports.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                if rel != "report.txt" && rel != "report.json" {
                    out.insert(rel, fs::read(&p).unwrap());
                }
            }
        }
    }
    out
}

pub fn random_lengths(rng: &mut impl Rng, max_count: usize) -> Vec<usize> {
    let n = rng.gen_range(0..=max_count);
    (0..n).map(|_| rng.gen_range(1..=120)).collect()
}

pub fn random_alignment(rng: &mut impl Rng, f_len: usize, e_len: usize) -> WordAlignment {
    let density: f64 = rng.gen_range(0.0..0.5);
    let mut links = Vec::new();
    for f in 0..f_len {
        for e in 0..e_len {
            if rng.gen_bool(density) {
                links.push((f, e));
            }
        }
    }
    links.shuffle(rng);
    WordAlignment::from_links(links)
}
