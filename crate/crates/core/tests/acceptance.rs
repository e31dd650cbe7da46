//! End-to-end acceptance checks. Runs as a plain binary and prints one line
//! per criterion; any failure makes the process exit non-zero.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use dmlex::lexicon::{match_context, select_candidates, Context};
use dmlex::phrase_table::{consistent_spans, extract_corpus, score_phrase_table, PhraseTable, PhraseTableEntry, DEFAULT_MAX_PHRASE_LEN};
use dmlex::pipeline::{validate_config, Pipeline};
use dmlex::prune::{contingency_counts, fisher_neg_log_p, prune, ContingencyTable, PruneConfig, ThresholdMode};
use dmlex::sentence_align::{align_lengths, AlignedCorpus, AlignerParams, SentencePair};
use dmlex::word_align::{symmetrize, train_model1, viterbi_align, Heuristic, Model1Config, WordAlignment};

use common::*;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn reference_scale() -> Outcome {
    // Corpus-scale candidate counts need the full 21-language proceedings and
    // the original toolkit; the property criteria below stand in for them.
    let sample = dmlex::lexicon::SeedMarkerList::sample();
    Err(format!(
        "not reproducible at desk scale (needs 427 seeds over the full proceedings; bundled sample has {})",
        sample.len()
    ))
}

fn synthetic_recovery() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let planted = write_synthetic_corpus(&dir.path().join("corpus"), &["pt"], 400, 7);
    check(planted.sentence_pairs >= 300, || "too few pairs".into())?;
    let multiword = planted.markers.iter().filter(|m| m.contains(' ')).count();
    check(multiword >= 2, || "no multiword markers".into())?;
    for m in &planted.markers {
        let total = planted.marker_occurrences.get(m).copied().unwrap_or(0);
        let comma = planted.comma_initial.get(m).copied().unwrap_or(0);
        check(total > 0 && 2 * comma >= total, || format!("{m}: {comma}/{total} comma-initial"))?;
    }
    fs::write(dir.path().join("seeds.txt"), planted.markers.join("\n")).map_err(|e| e.to_string())?;
    let cfg = write_config(
        dir.path(),
        &["corpus.root = corpus".into(), "corpus.foreign = pt".into(), "markers.seeds = seeds.txt".into()],
    );
    let config = validate_config(&cfg).map_err(|e| e.to_string())?;
    let report = Pipeline::new(config.clone()).run(None).map_err(|e| format!("{e:#}"))?;
    check(!report.has_failures(), || report.to_text())?;
    let lexicon_json = fs::read_to_string(config.output_dir.join("lexicon/lexicon.json")).map_err(|e| e.to_string())?;
    let lexicon = dmlex::lexicon::Lexicon::from_json(&lexicon_json).map_err(|e| e.to_string())?;
    let mut hits = 0;
    let mut misses = Vec::new();
    for m in &planted.markers {
        let top = lexicon.get(m, "pt").and_then(|l| l.first()).map(|t| t.translation.join(" "));
        let ok = top.as_deref().is_some_and(|t| planted.translations["pt"][m].contains(&t));
        if ok {
            hits += 1;
        } else {
            misses.push(format!("{m} -> {top:?}"));
        }
    }
    let elapsed = start.elapsed();
    check(hits >= 9, || format!("top-1 for {hits}/10; misses {misses:?}"))?;
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} sentence pairs, top-1 planted translation for {hits}/10 markers in {:.1}s; missed {misses:?}",
        planted.sentence_pairs,
        elapsed.as_secs_f64()
    ))
}

fn aligner_oracle() -> Outcome {
    let start = Instant::now();
    let params = AlignerParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut visited = 0u64;
    let mut done = 0;
    while done < 500 {
        let src = random_lengths(&mut rng, 8);
        let tgt = random_lengths(&mut rng, 8);
        if src.is_empty() && tgt.is_empty() {
            continue;
        }
        let beads = align_lengths(&src, &tgt, &params);
        let (best, count) = min_tiling(&src, &tgt, &params);
        visited += count;
        let best = best.ok_or("no tiling")?;
        let shapes: Vec<_> = beads.iter().map(|b| b.shape).collect();
        let mut running = 0.0;
        let prefix: Vec<f64> = beads
            .iter()
            .map(|b| {
                running += b.cost;
                running
            })
            .collect();
        check(shapes == best.shapes && prefix == best.prefix_costs, || {
            format!("{src:?} / {tgt:?}: dp {shapes:?} {prefix:?} vs {:?} {:?}", best.shapes, best.prefix_costs)
        })?;
        done += 1;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "500 paragraphs bead-for-bead equal to exhaustive minimum ({visited} tilings, {:.1}s)",
        elapsed.as_secs_f64()
    ))
}

fn em_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut corpora: Vec<Vec<(Vec<String>, Vec<String>)>> = vec![vec![
        (toks("the house"), toks("la maison")),
        (toks("the"), toks("la")),
    ]];
    for _ in 0..30 {
        let vocab = rng.gen_range(2..12);
        let n = rng.gen_range(1..25);
        corpora.push(
            (0..n)
                .map(|_| {
                    let side = |rng: &mut ChaCha8Rng, p: &str| -> Vec<String> {
                        (0..rng.gen_range(1..8)).map(|_| format!("{p}{}", rng.gen_range(0..vocab))).collect()
                    };
                    (side(&mut rng, "e"), side(&mut rng, "f"))
                })
                .collect(),
        );
    }
    let mut iterations = 0;
    for (ci, corpus) in corpora.iter().enumerate() {
        let view: Vec<(&[String], &[String])> = corpus.iter().map(|(a, b)| (&a[..], &b[..])).collect();
        for use_null in [false, true] {
            let cfg = Model1Config {
                iterations: 15,
                use_null,
                ..Default::default()
            };
            let m = train_model1(&view, &cfg).map_err(|e| e.to_string())?;
            for w in m.log_likelihoods.windows(2) {
                check(w[1] >= w[0] - 1e-12, || format!("corpus {ci}: likelihood fell {} -> {}", w[0], w[1]))?;
            }
            let err = m.table.normalization_error();
            check(err <= 1e-9, || format!("corpus {ci}: normalization error {err}"))?;
            iterations += cfg.iterations;
        }
    }
    let toy = &corpora[0];
    let view: Vec<(&[String], &[String])> = toy.iter().map(|(a, b)| (&a[..], &b[..])).collect();
    let cfg = Model1Config {
        iterations: 30,
        use_null: false,
        ..Default::default()
    };
    let t = train_model1(&view, &cfg).map_err(|e| e.to_string())?.table.prob("the", "la").unwrap_or(0.0);
    check(t >= 0.999, || format!("t(la|the) = {t}"))?;
    Ok(format!(
        "{} corpora x NULL on/off, {iterations} iterations monotone and normalized; t(la|the) = {t:.6}",
        corpora.len()
    ))
}

fn extraction_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut spans = 0;
    for k in 0..1000 {
        let f_len = rng.gen_range(1..=10);
        let e_len = rng.gen_range(1..=10);
        let alignment = random_alignment(&mut rng, f_len, e_len);
        let max_len = if k % 2 == 0 { DEFAULT_MAX_PHRASE_LEN } else { 10 };
        let got: BTreeSet<_> = consistent_spans(f_len, e_len, &alignment, max_len)
            .into_iter()
            .map(|(f, e)| (f.start, f.end, e.start, e.end))
            .collect();
        let want = brute_force_spans(f_len, e_len, &alignment, max_len);
        check(got == want, || format!("pair {k}: {f_len}x{e_len} {}", alignment.to_pharaoh()))?;
        spans += want.len();
    }
    Ok(format!("1000 random pairs, {spans} span pairs, sets identical"))
}

fn fisher_oracle() -> Outcome {
    let mut tables = 0;
    let mut worst = 0.0f64;
    let mut ns: Vec<u64> = (1..=30).collect();
    ns.extend((40..=200).step_by(10));
    for &n in &ns {
        let margins: Vec<u64> = if n <= 12 {
            (1..=n).collect()
        } else {
            let mut m: Vec<u64> = vec![1, 2, 3, 5, 8, n / 4, n / 3, n / 2, 2 * n / 3, n - 2, n - 1, n];
            m.retain(|&x| x >= 1 && x <= n);
            m.sort();
            m.dedup();
            m
        };
        for &c_s in &margins {
            for &c_t in &margins {
                let lo = (c_s + c_t).saturating_sub(n).max(1);
                for c_st in lo..=c_s.min(c_t) {
                    let ct = ContingencyTable::new(c_s, c_t, c_st, n);
                    let got = fisher_neg_log_p(&ct).map_err(|e| e.to_string())?;
                    let want = exact_neg_log_p(c_s, c_t, c_st, n);
                    let rel = if want == 0.0 { got.abs() } else { ((got - want) / want).abs() };
                    check(rel < 1e-9, || format!("{ct:?}: {got} vs exact {want}"))?;
                    worst = worst.max(rel);
                    tables += 1;
                }
            }
        }
    }
    for n in 1..=200u64 {
        let v = fisher_neg_log_p(&ContingencyTable::new(1, 1, 1, n)).map_err(|e| e.to_string())?;
        check((v - (n as f64).ln()).abs() < 1e-9, || format!("1-1-1 with n={n}: {v}"))?;
    }
    Ok(format!("{tables} tables with n <= 200, worst relative error {worst:.2e}; 1-1-1 = ln n"))
}

fn random_phrase_table(seed: u64) -> Result<(PhraseTable, AlignedCorpus), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = AlignedCorpus::default();
    let vocab = rng.gen_range(15..60);
    for _ in 0..rng.gen_range(20..60) {
        let len = rng.gen_range(2..7);
        let src: Vec<String> = (0..len).map(|_| format!("f{}", rng.gen_range(0..vocab))).collect();
        let tgt: Vec<String> = src.iter().map(|w| format!("e{}", &w[1..])).collect();
        corpus.pairs.push(SentencePair { src, tgt });
    }
    let cfg = Model1Config::default();
    let f_e = train_model1(&corpus.tgt_src(), &cfg).map_err(|e| e.to_string())?.table;
    let e_f = train_model1(&corpus.src_tgt(), &cfg).map_err(|e| e.to_string())?.table;
    let alignments: Vec<WordAlignment> = corpus
        .pairs
        .iter()
        .map(|p| {
            symmetrize(
                &viterbi_align(&p.tgt, &p.src, &f_e),
                &viterbi_align(&p.src, &p.tgt, &e_f),
                Heuristic::GrowDiagFinalAnd,
            )
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let instances = extract_corpus(&corpus.src_tgt(), &alignments, 4).map_err(|e| e.to_string())?;
    Ok((score_phrase_table(&instances, &f_e, &e_f, corpus.len()), corpus))
}

fn pruning_contract() -> Outcome {
    let mut singletons_before = 0;
    let mut checked = 0;
    for seed in 0..4 {
        let (table, corpus) = random_phrase_table(seed)?;
        let counts = contingency_counts(&table, &corpus).map_err(|e| e.to_string())?;
        let is_111 = |c: &ContingencyTable| c.c_s == 1 && c.c_t == 1 && c.c_st == 1;
        singletons_before += counts.iter().filter(|c| is_111(c)).count();
        let (kept, _) = prune(&table, &counts, &PruneConfig::default()).map_err(|e| e.to_string())?;
        let kept_counts = contingency_counts(&kept, &corpus).map_err(|e| e.to_string())?;
        check(kept_counts.iter().all(|c| !is_111(c)), || format!("seed {seed}: a 1-1-1 entry survived"))?;

        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let alpha = (corpus.len() as f64).ln();
        let mut thresholds: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..3.0 * alpha)).collect();
        thresholds.sort_by(f64::total_cmp);
        let mut previous: Option<BTreeSet<(Vec<String>, Vec<String>)>> = None;
        for t in thresholds {
            let cfg = PruneConfig {
                mode: ThresholdMode::Custom(t),
                ..Default::default()
            };
            let (kept, _) = prune(&table, &counts, &cfg).map_err(|e| e.to_string())?;
            let set: BTreeSet<_> = kept.entries().iter().map(|e| (e.foreign.clone(), e.english.clone())).collect();
            if let Some(prev) = &previous {
                check(set.is_subset(prev), || format!("seed {seed}: threshold {t} kept a new entry"))?;
            }
            previous = Some(set);
            checked += 1;
        }
    }
    check(singletons_before > 0, || "corpora had no 1-1-1 entries to prune".into())?;
    Ok(format!(
        "{singletons_before} 1-1-1 entries all pruned under alpha+e; {checked} thresholds nested"
    ))
}

fn selection_contract() -> Outcome {
    let words = ["a", "b", "c"];
    let symbols = ["a", "b", "c", ",", "."];
    let mut sides: Vec<Vec<String>> = Vec::new();
    let mut frontier: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..4 {
        let mut next = Vec::new();
        for s in &frontier {
            for sym in symbols {
                let mut t = s.clone();
                t.push(sym.to_string());
                next.push(t);
            }
        }
        sides.extend(next.iter().cloned());
        frontier = next;
    }
    let entries: Vec<PhraseTableEntry> = sides
        .iter()
        .map(|e| PhraseTableEntry {
            foreign: vec!["x".into()],
            english: e.clone(),
            inv_phrase_prob: 1.0,
            inv_lex_weight: 1.0,
            dir_phrase_prob: 1.0,
            dir_lex_weight: 1.0,
            alignment: WordAlignment::default(),
            joint_count: 1.0,
        })
        .collect();
    let table = PhraseTable::new(entries, 1);
    let mut markers: Vec<Vec<String>> = Vec::new();
    for a in words {
        markers.push(vec![a.into()]);
        for b in words {
            markers.push(vec![a.into(), b.into()]);
            for c in words {
                markers.push(vec![a.into(), b.into(), c.into()]);
            }
        }
    }
    let mut matches = 0;
    for m in &markers {
        let re = Regex::new(&format!(r"^(?P<pre>[,.] )?{}(?P<post> [,.])?$", regex::escape(&m.join(" ")))).unwrap();
        let want: BTreeSet<(String, Context)> = sides
            .iter()
            .filter_map(|s| {
                let text = s.join(" ");
                let caps = re.captures(&text)?;
                let ctx = match (caps.name("pre").is_some(), caps.name("post").is_some()) {
                    (false, false) => Context::None,
                    (true, false) => Context::Preceded,
                    (false, true) => Context::Followed,
                    (true, true) => Context::Both,
                };
                Some((text, ctx))
            })
            .collect();
        let got: BTreeSet<(String, Context)> = select_candidates(&table, m, "xx")
            .into_iter()
            .map(|c| (c.raw_entry.english.join(" "), c.context))
            .collect();
        check(got == want, || format!("marker {:?}: {got:?} vs {want:?}", m.join(" ")))?;
        for s in &sides {
            check(
                match_context(s, m).is_some() == want.iter().any(|(t, _)| *t == s.join(" ")),
                || format!("match_context disagrees on {s:?}"),
            )?;
        }
        matches += want.len();
    }
    Ok(format!(
        "{} english sides x {} markers, {matches} matches identical to regex reference",
        sides.len(),
        markers.len()
    ))
}

fn mini_corpus() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_mini_corpus(&dir.path().join("corpus"));
    let cfg = write_config(dir.path(), &["corpus.root = corpus".into(), "corpus.foreign = pt".into()]);
    let config = validate_config(&cfg).map_err(|e| e.to_string())?;
    let report = Pipeline::new(config.clone()).run(None).map_err(|e| format!("{e:#}"))?;
    check(!report.has_failures(), || report.to_text())?;
    let tsv = fs::read_to_string(config.output_dir.join("lexicon/lexicon.tsv")).map_err(|e| e.to_string())?;
    let rows: BTreeMap<(String, String), Vec<String>> = tsv.lines().skip(1).fold(BTreeMap::new(), |mut acc, l| {
        let f: Vec<&str> = l.split('\t').collect();
        acc.entry((f[0].to_string(), f[1].to_string())).or_default().push(f[2].to_string());
        acc
    });
    let get = |m: &str| rows.get(&(m.to_string(), "pt".to_string())).cloned().unwrap_or_default();
    let above_all = get("above all");
    let since = get("since");
    check(above_all.contains(&"sobretudo".to_string()), || format!("above all -> {above_all:?}\n{tsv}"))?;
    check(since.contains(&"pois".to_string()), || format!("since -> {since:?}\n{tsv}"))?;
    Ok(format!("above all -> {above_all:?}, since -> {since:?}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_synthetic_corpus(&dir.path().join("corpus"), &["pt", "fr"], 320, 21);
    let mut snapshots = Vec::new();
    for (run, jobs) in [(1, 1), (2, 4)] {
        let cfg = write_config(
            dir.path(),
            &[
                "corpus.root = corpus".into(),
                "corpus.foreign = pt, fr".into(),
                format!("output.dir = out{run}"),
                format!("jobs = {jobs}"),
            ],
        );
        let config = validate_config(&cfg).map_err(|e| e.to_string())?;
        let report = Pipeline::new(config.clone()).run(None).map_err(|e| format!("{e:#}"))?;
        check(!report.has_failures(), || report.to_text())?;
        snapshots.push(snapshot(&config.output_dir));
    }
    check(snapshots[0].len() > 20, || "too few outputs".into())?;
    let keys: Vec<&String> = snapshots[0].keys().collect();
    check(keys == snapshots[1].keys().collect::<Vec<_>>(), || "different file sets".into())?;
    for (k, v) in &snapshots[0] {
        check(&snapshots[1][k] == v, || format!("{k} differs"))?;
    }
    let bytes: usize = snapshots[0].values().map(Vec::len).sum();
    Ok(format!("{} files ({bytes} bytes) identical across two clean runs (1 and 4 workers)", keys.len()))
}

fn main() -> ExitCode {
    // Criteria that cannot be met without the full corpus. They still print
    // FAIL but do not set the exit status.
    let unattainable = ["reference-scale candidate counts"];
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("reference-scale candidate counts", reference_scale),
        ("synthetic end-to-end recovery", synthetic_recovery),
        ("sentence aligner vs exhaustive enumeration", aligner_oracle),
        ("EM likelihood and normalization", em_properties),
        ("phrase extraction vs brute force", extraction_oracle),
        ("Fisher test vs exact rational arithmetic", fisher_oracle),
        ("significance pruning contract", pruning_contract),
        ("marker selection vs reference matcher", selection_contract),
        ("mini-corpus exemplars", mini_corpus),
        ("determinism across clean runs", determinism),
    ];
    let (mut passed, mut failed, mut known) = (0, 0, 0);
    for (name, f) in criteria {
        match f() {
            Ok(detail) => {
                passed += 1;
                println!("PASS  {name}: {detail}");
            }
            Err(why) => {
                if unattainable.contains(&name) {
                    known += 1;
                } else {
                    failed += 1;
                }
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {passed} passed, {} failed ({known} unattainable)", failed + known);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
