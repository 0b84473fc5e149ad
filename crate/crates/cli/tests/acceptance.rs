//! One PASS / FAIL / NOT RUN line per acceptance criterion. Criteria 1-4 need
//! loghub logs in `$FLEXLOG_LOGHUB_DIR/<dataset_name>.log`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};

use flexlog::corpus::{
    disjoint_value_split, generate_synthetic, label_corpus, load_corpus, split, synthetic_spec, EventSpec, Label,
    LabeledCorpus, SplitSizes,
};
use flexlog::evaluator::{canonical_label, f1, mean, median, run_experiment, DatasetInput, ExperimentConfig, Method};
use flexlog::models::{gradient_check, train, LookupParser, ModelConfig, ModelKind, TrainConfig};
use flexlog::mutator::{apply_mutation, variant_matrix};
use flexlog::templates::{template_to_regex, AelConfig, DrainConfig, Miner, TemplateParser, WILDCARD};
use flexlog::textprep::{
    build_vocabulary_capped, encode, one_hot, pad_truncate, prepare, EncodedDataset, PrepConfig, Vocabulary,
};
use flexlog::{MutationKind, MutationPlan, ReportMatrix};

const ROOT: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");
const DATASETS: [&str; 7] = ["Android", "BGL", "HealthApp", "Linux", "Mac", "Spark", "Windows"];
const TABLE_NO: [f64; 7] = [0.987, 0.985, 0.942, 1.0, 1.0, 1.0, 1.0];
const TABLE_YES: [f64; 7] = [0.987, 0.985, 0.917, 1.0, 1.0, 1.0, 1.0];
const TOL: f64 = 0.05;

enum Status {
    Pass,
    Fail,
    NotRun,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Pass,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Fail,
        detail: detail.into(),
    }
}

fn judge(ok: bool, detail: String) -> Outcome {
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn config(name: &str) -> PathBuf {
    Path::new(ROOT).join("configs").join(format!("{}.toml", name.to_lowercase()))
}

fn spec(name: &str) -> EventSpec {
    EventSpec::load(config(name)).expect("dataset config")
}

fn canonical(labels: &[Label], prep: &PrepConfig) -> Vec<Label> {
    labels.iter().map(|l| canonical_label(l, prep)).collect()
}

// ---- criteria 1-4 ---------------------------------------------------------

fn loghub_matrix(dir: &Path) -> Result<ReportMatrix, String> {
    let mut inputs = Vec::new();
    for name in DATASETS {
        let spec = spec(name);
        let path = dir.join(format!("{}.log", spec.dataset_name));
        let records = load_corpus(&path, 8000).map_err(|e| format!("{}: {e}", path.display()))?;
        let corpus = label_corpus(&records, &spec).map_err(|e| e.to_string())?;
        let sizes = SplitSizes {
            train: 6000,
            test: 2000,
        };
        let split = split(&corpus, sizes).map_err(|e| format!("{name}: {e}"))?;
        inputs.push(DatasetInput { spec, split });
    }
    let mut methods: Vec<Method> = ModelKind::ALL.iter().map(|&k| Method::Model(k)).collect();
    methods.extend([Method::Drain, Method::Ael]);
    let cfg = ExperimentConfig {
        methods,
        ..ExperimentConfig::default()
    };
    Ok(run_experiment(&inputs, &cfg))
}

fn cell(m: &ReportMatrix, dataset: &str, method: Method, kind: MutationKind, start: usize) -> Option<f64> {
    m.find(dataset, method, kind, start).and_then(|r| r.f1)
}

const STATEFUL: Method = Method::Model(ModelKind::StatefulLstm);

fn criterion_1(m: &ReportMatrix) -> Outcome {
    let mut bad = Vec::new();
    for (i, d) in DATASETS.iter().enumerate() {
        let no = cell(m, d, STATEFUL, MutationKind::None, 0);
        let yes = cell(m, d, STATEFUL, MutationKind::Syn, 500);
        match (no, yes) {
            (Some(no), Some(yes)) if (no - TABLE_NO[i]).abs() <= TOL && (yes - TABLE_YES[i]).abs() <= TOL => {}
            _ => bad.push(format!("{d} no={no:?} yes={yes:?}")),
        }
    }
    judge(bad.is_empty(), format!("{} of 7 datasets outside +-{TOL}: {}", bad.len(), bad.join("; ")))
}

fn criterion_2(m: &ReportMatrix) -> Outcome {
    let s = m.scores(STATEFUL, Some(MutationKind::None));
    match (median(&s), mean(&s)) {
        (Some(med), Some(avg)) => judge(
            s.len() == 7 && (med - 1.0).abs() <= 0.02 && avg >= 0.97,
            format!("median {med:.3}, mean {avg:.3} over {} datasets", s.len()),
        ),
        _ => fail("no stateful LSTM scores"),
    }
}

fn criterion_3(m: &ReportMatrix) -> Outcome {
    let mut bad = Vec::new();
    for method in [Method::Drain, Method::Ael] {
        for d in DATASETS {
            let f = cell(m, d, method, MutationKind::None, 0).unwrap_or(f64::NAN);
            let (target, tol) = if d == "Android" { (0.14, 0.05) } else { (1.0, 0.02) };
            if f.is_nan() || (f - target).abs() > tol {
                bad.push(format!("{method} {d} none={f:.3}"));
            }
        }
    }
    for d in DATASETS.iter().filter(|d| !matches!(**d, "BGL" | "Linux")) {
        let f = cell(m, d, Method::Drain, MutationKind::Syn, 500).unwrap_or(f64::NAN);
        if f.is_nan() || f > 0.60 {
            bad.push(format!("drain {d} syn-500={f:.3}"));
        }
    }
    judge(bad.is_empty(), format!("{} violations: {}", bad.len(), bad.join("; ")))
}

fn criterion_4(m: &ReportMatrix) -> Outcome {
    let mut worst = (0.0f64, String::new());
    let mut bad = Vec::new();
    for kind in ModelKind::ALL {
        let method = Method::Model(kind);
        for d in DATASETS {
            let Some(base) = cell(m, d, method, MutationKind::None, 0) else {
                bad.push(format!("{kind} {d}: no baseline"));
                continue;
            };
            let tol = if d == "HealthApp" { 0.06 } else { 0.05 };
            for r in m.rows.iter().filter(|r| r.dataset == d && r.method == method && r.kind != MutationKind::None) {
                let diff = r.f1.map_or(f64::INFINITY, |f| (f - base).abs());
                if diff > worst.0 {
                    worst = (diff, format!("{kind} {d} {}-{}", r.kind, r.start_line));
                }
                if diff > tol {
                    bad.push(format!("{kind} {d} {}-{}: {diff:.3}", r.kind, r.start_line));
                }
            }
        }
    }
    judge(
        bad.is_empty(),
        format!("largest |mutated - none| {:.3} ({}); {} over tolerance", worst.0, worst.1, bad.len()),
    )
}

// ---- criterion 5 ----------------------------------------------------------

fn criterion_5a() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in ModelKind::ALL {
        match gradient_check(kind, 7) {
            Ok(r) => {
                ok &= r.max_rel_error < 1e-4;
                parts.push(format!("{kind} {:.1e}", r.max_rel_error));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{kind} error: {e}"));
            }
        }
    }
    judge(ok, format!("max relative error: {}", parts.join(", ")))
}

/// 5b and 5c share one trained model.
fn criterion_5bc() -> (Outcome, Outcome) {
    let spec = synthetic_spec();
    let data = disjoint_value_split(&spec, 1500, 1000, 20, 7);
    let p = match prepare(&data.train, &spec.event_key, PrepConfig::default()) {
        Ok(p) => p,
        Err(e) => return (fail(e.to_string()), fail(e.to_string())),
    };
    let model = match train(
        &ModelConfig::new(ModelKind::StatefulLstm),
        &p.vocab,
        &p.cfg,
        &p.train,
        &TrainConfig::default(),
    ) {
        Ok(m) => m,
        Err(e) => return (fail(e.to_string()), fail(e.to_string())),
    };

    let truth = canonical(data.test.labels(), &p.cfg);
    let pred = model.predict_lines(data.test.lines()).expect("prediction");
    let events: Vec<usize> = (0..truth.len()).filter(|&i| truth[i].is_value()).collect();
    let train_values: HashSet<&str> = data.train.labels().iter().filter_map(Label::as_value).collect();
    let disjoint = data.test.labels().iter().filter_map(Label::as_value).all(|v| !train_values.contains(v));
    let acc = events.iter().filter(|&&i| pred[i] == truth[i]).count() as f64 / events.len() as f64;
    let lookup = LookupParser::fit(&data.train, &p.cfg).expect("lookup fit");
    let lookup_pred: Vec<Label> = data.test.lines().map(|l| lookup.predict(l)).collect();
    let lookup_acc = events.iter().filter(|&&i| lookup_pred[i] == truth[i]).count() as f64 / events.len() as f64;
    let b = judge(
        disjoint && acc >= 0.9 && lookup_acc == 0.0,
        format!(
            "unseen-value accuracy {acc:.3} over {} test events, lookup {lookup_acc:.3}, values disjoint: {disjoint}",
            events.len()
        ),
    );

    let none_f1 = f1(&truth, &pred).expect("lengths");
    let syn = apply_mutation(&data.test, &spec, MutationPlan::new(MutationKind::Syn, 500));
    let syn_truth = canonical(syn.corpus.labels(), &p.cfg);
    let syn_pred = model.predict_lines(syn.corpus.lines()).expect("prediction");
    let syn_f1 = f1(&syn_truth, &syn_pred).expect("lengths");
    let drain = Miner::Drain(DrainConfig::default());
    let drain_f1 = |c: &LabeledCorpus| {
        let parser = TemplateParser::fit(c, &spec, &drain).expect("drain fit");
        f1(c.labels(), &parser.extract(c.lines()).labels).expect("lengths")
    };
    let (d_none, d_syn) = (drain_f1(&data.test), drain_f1(&syn.corpus));
    let c = judge(
        (syn_f1 - none_f1).abs() <= 0.05 && d_none - d_syn >= 0.3,
        format!(
            "stateful LSTM none {none_f1:.3} syn-500 {syn_f1:.3}; drain none {d_none:.3} syn-500 {d_syn:.3} ({} lines mutated)",
            syn.mutated_line_indices.len()
        ),
    );
    (b, c)
}

fn token_lines() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(prop::collection::vec("[a-f]{1,2}|[0-9]{1,3}", 0..8), 1..25)
}

fn vocab_invariants(lines: Vec<Vec<String>>, labels: Vec<String>, cap: usize) -> Result<(), TestCaseError> {
    let v = build_vocabulary_capped(&lines, &labels, cap);
    prop_assert!(v.len() <= cap + 3, "cap");
    prop_assert_eq!(&v, &build_vocabulary_capped(&lines, &labels, cap));
    let forced: HashSet<&str> = labels.iter().map(String::as_str).collect();
    let ranked: Vec<u32> = (3..v.len() as u32)
        .filter(|&id| !forced.contains(v.token(id).unwrap()))
        .collect();
    for w in ranked.windows(2) {
        prop_assert!(v.frequency(w[0]) >= v.frequency(w[1]), "ranking");
    }
    let mut buf = Vec::new();
    v.write_csv(&mut buf).unwrap();
    prop_assert_eq!(Vocabulary::read_csv(&buf[..]).unwrap(), v.clone());

    let len = lines.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let examples: Vec<_> = lines
        .iter()
        .map(|l| flexlog::textprep::EncodedExample {
            ids: pad_truncate(&encode(l, &v), len),
            label_id: 2,
        })
        .collect();
    let ds = EncodedDataset {
        max_len: len,
        vocab_size: v.len(),
        examples,
    };
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    prop_assert_eq!(EncodedDataset::read_csv(&buf[..]).unwrap(), ds);
    Ok(())
}

fn hamming_invariant(a: Vec<u32>, b: Vec<u32>) -> Result<(), TestCaseError> {
    let v = 10;
    let (ma, mb) = (one_hot(&a, v).unwrap(), one_hot(&b, v).unwrap());
    for (t, (ra, rb)) in ma.data().chunks(v).zip(mb.data().chunks(v)).enumerate() {
        prop_assert_eq!(ra.iter().sum::<f64>(), 1.0);
        let dist = ra.iter().zip(rb).filter(|(x, y)| x != y).count();
        let expected = if a[t] == b[t] { 0 } else { 2 };
        prop_assert_eq!(dist, expected);
    }
    Ok(())
}

fn criterion_5d() -> Outcome {
    let cfg = PropConfig {
        cases: 256,
        failure_persistence: None,
        ..PropConfig::default()
    };
    let mut runner = TestRunner::new(cfg.clone());
    let vocab = runner.run(
        &(token_lines(), prop::collection::vec("[0-9]{1,3}", 0..5), 1usize..40),
        |(l, lab, cap)| vocab_invariants(l, lab, cap),
    );
    let mut runner = TestRunner::new(cfg);
    let pairs = (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(0u32..10, n),
            prop::collection::vec(0u32..10, n),
        )
    });
    let hamming = runner.run(&pairs, |(a, b)| hamming_invariant(a, b));
    let prep = PrepConfig::default();
    let lines = ["calculateCaloriesWithCache totalCalories=126775", "zzzfoo"];
    let norm: Vec<Vec<String>> = lines.iter().map(|l| flexlog::textprep::normalize(l, &prep)).collect();
    let v = build_vocabulary_capped(&norm[..1], &["126775".to_string()], 10_000);
    let oov_ok = encode(&norm[1], &v) == vec![1];
    match (vocab, hamming) {
        (Ok(()), Ok(())) if oov_ok => pass("vocabulary cap/ranking/determinism/CSV, encoded CSV, one-hot Hamming 0/2, OOV: 256 cases each"),
        (v, h) => fail(format!("vocabulary: {v:?}; hamming: {h:?}; oov: {oov_ok}")),
    }
}

// ---- criterion 6 ----------------------------------------------------------

fn run_all(out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_flexlog"))
        .args(["all", "--dataset"])
        .arg(config("HealthApp"))
        .arg("--out")
        .arg(out)
        .args([
            "--synthetic",
            "1500",
            "--train-lines",
            "1000",
            "--test-lines",
            "500",
            "--start-lines",
            "100,200,300",
            "--timing",
            "off",
            "--max-epochs",
            "6",
            "--patience",
            "3",
            "--seed",
            "11",
        ])
        .env("RUST_LOG", "warn")
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("flexlog all exited with {status}"))
    }
}

fn files_below(dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>, base: &Path) {
    for entry in fs::read_dir(dir).into_iter().flatten().flatten() {
        let path = entry.path();
        if path.is_dir() {
            files_below(&path, out, base);
        } else if path.extension().is_some_and(|e| e == "ckpt") || path.starts_with(base.join("report")) {
            out.insert(path.strip_prefix(base).unwrap().to_path_buf(), fs::read(&path).unwrap());
        }
    }
}

fn criterion_6() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if let Err(e) = run_all(a.path()).and_then(|_| run_all(b.path())) {
        return fail(e);
    }
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    files_below(a.path(), &mut fa, a.path());
    files_below(b.path(), &mut fb, b.path());
    let ckpts = fa.keys().filter(|p| p.extension().is_some_and(|e| e == "ckpt")).count();
    let differing: Vec<String> = fa
        .iter()
        .filter(|(p, bytes)| fb.get(*p) != Some(*bytes))
        .map(|(p, _)| p.display().to_string())
        .collect();
    judge(
        ckpts > 0 && fa.len() > ckpts && fa.len() == fb.len() && differing.is_empty(),
        format!("{} report/checkpoint files compared ({ckpts} checkpoints), differing: {differing:?}", fa.len()),
    )
}

// ---- criterion 7 ----------------------------------------------------------

fn criterion_7() -> Outcome {
    let linux = spec("Linux");
    let fixture = Path::new(ROOT).join("crates/core/tests/data/linux_fixture.log");
    let corpus = label_corpus(&load_corpus(&fixture, usize::MAX).unwrap(), &linux).unwrap();
    let expected = "session opened for <*> <*> by (uid=<*>)";
    let mutated = apply_mutation(&corpus, &linux, MutationPlan::new(MutationKind::Syn, 200));
    let drain = Miner::Drain(DrainConfig::default());
    let found = TemplateParser::fit(&mutated.corpus, &linux, &drain)
        .unwrap()
        .templates
        .iter()
        .any(|t| t.text() == expected);

    let syn = synthetic_spec();
    let mut corpora: Vec<(EventSpec, LabeledCorpus)> =
        variant_matrix(&corpus, &linux).into_iter().map(|v| (linux.clone(), v.corpus)).collect();
    corpora.extend(
        variant_matrix(&generate_synthetic(&syn, 2000, 3), &syn)
            .into_iter()
            .map(|v| (syn.clone(), v.corpus)),
    );
    let (mut templates, mut failures) = (0, Vec::new());
    for (spec, c) in &corpora {
        for miner in [drain.clone(), Miner::Ael(AelConfig::default())] {
            let p = TemplateParser::fit(c, spec, &miner).unwrap();
            if let Some(line) = c.lines().find(|l| p.template_of(l).is_none()) {
                failures.push(format!("{} left {line:?} unmatched", miner.name()));
            }
            for t in &p.templates {
                templates += 1;
                let re = template_to_regex(t).unwrap();
                let line = t
                    .tokens
                    .iter()
                    .map(|tok| tok.replace(WILDCARD, "x9"))
                    .collect::<Vec<_>>()
                    .join(" ");
                let caps = re.captures(&line);
                let ok = caps.is_some_and(|c| c.len() == t.wildcard_count() + 1 && c.iter().skip(1).all(|m| m.unwrap().as_str() == "x9"));
                if !ok {
                    failures.push(format!("{} does not round-trip", t.text()));
                }
            }
        }
    }
    judge(
        found && failures.is_empty(),
        format!(
            "template {expected:?} found: {found}; {templates} templates over {} corpora round-trip, failures: {failures:?}",
            corpora.len()
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();
    let loghub = std::env::var_os("FLEXLOG_LOGHUB_DIR").map(PathBuf::from);
    let not_run = || Outcome {
        status: Status::NotRun,
        detail: "loghub unavailable; substituted by criterion 5".into(),
    };
    match loghub.as_deref().map(loghub_matrix) {
        None => {
            results.push(("1", "reference F1 table", not_run()));
            results.push(("2", "aggregate median/mean", not_run()));
            results.push(("3", "baseline contrast", not_run()));
            results.push(("4", "DL mutation insensitivity", not_run()));
        }
        Some(Err(e)) => {
            for (id, name) in [
                ("1", "reference F1 table"),
                ("2", "aggregate median/mean"),
                ("3", "baseline contrast"),
                ("4", "DL mutation insensitivity"),
            ] {
                results.push((id, name, fail(format!("loading loghub data: {e}"))));
            }
        }
        Some(Ok(m)) => {
            results.push(("1", "reference F1 table", criterion_1(&m)));
            results.push(("2", "aggregate median/mean", criterion_2(&m)));
            results.push(("3", "baseline contrast", criterion_3(&m)));
            results.push(("4", "DL mutation insensitivity", criterion_4(&m)));
        }
    }
    let t = Instant::now();
    results.push(("5a", "gradient check", criterion_5a()));
    let (b, c) = criterion_5bc();
    results.push(("5b", "generalization witness", b));
    results.push(("5c", "mutation robustness", c));
    results.push(("5d", "tokenizer invariants", criterion_5d()));
    let suite5 = t.elapsed();
    results.push(("6", "determinism", criterion_6()));
    results.push(("7", "template oracle", criterion_7()));

    let mut failed = 0;
    for (id, name, o) in &results {
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::NotRun => "NOT RUN",
        };
        println!("criterion {id:<2} {name:<28} {tag:<7} {}", o.detail);
    }
    println!(
        "synthetic suite (5a-5d) {:.1}s, total {:.1}s",
        suite5.as_secs_f64(),
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
