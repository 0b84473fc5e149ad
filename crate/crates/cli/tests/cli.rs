use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/healthapp.toml");

fn flexlog() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_flexlog"));
    c.env_remove("FLEXLOG_SEED").env_remove("FLEXLOG_LOGHUB_DIR").env("RUST_LOG", "warn");
    c
}

fn run(c: &mut Command) -> Output {
    c.output().expect("spawn flexlog")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 14] = [
    "--synthetic",
    "600",
    "--train-lines",
    "400",
    "--test-lines",
    "200",
    "--start-lines",
    "50,100,150",
    "--timing",
    "off",
    "--max-epochs",
    "3",
    "--patience",
    "2",
];

fn all(out: &Path) -> Command {
    let mut c = flexlog();
    c.args(["all", "--dataset", CONFIG, "--out"]).arg(out).args(SMALL);
    c
}

fn manifest_stages(out: &Path) -> Vec<String> {
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    m["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["stage"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn unknown_model_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(flexlog()
        .args(["train", "--dataset", CONFIG, "--out"])
        .arg(dir.path())
        .args(["--model", "bogus"]));
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for id in ["lstm", "stateful-lstm", "fcn", "lstm-fcn", "gru-fcn"] {
        assert!(err.contains(id), "{err}");
    }
}

#[test]
fn unknown_flag_is_a_user_error() {
    let o = run(flexlog().args(["prep", "--no-such-flag"]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ingest_without_a_log_source_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(flexlog().args(["ingest", "--dataset", CONFIG, "--out"]).arg(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("FLEXLOG_LOGHUB_DIR"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(flexlog()
        .args(["ingest", "--dataset", "/nonexistent/x.toml", "--synthetic", "100", "--out"])
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_before_prep_points_at_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(flexlog()
        .args(["train", "--dataset", CONFIG, "--model", "fcn", "--out"])
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("prep"), "{}", stderr(&o));
}

#[test]
fn all_writes_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = run(&mut all(out));
    assert!(o.status.success(), "{}", stderr(&o));

    let ds = out.join("healthapp");
    for f in ["train.log", "test.log", "train_labels.csv", "test_labels.csv", "vocab.csv", "train_encoded.csv"] {
        assert!(ds.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_dir(ds.join("variants")).unwrap().count(), 15);
    assert!(ds.join("models/stateful-lstm-seed7.ckpt").is_file());
    assert_eq!(fs::read_dir(ds.join("predictions")).unwrap().count(), 7);
    assert_eq!(fs::read_dir(ds.join("templates")).unwrap().count(), 14);
    assert!(out.join("eval/matrix.json").is_file());
    assert!(out.join("report/report.csv").is_file());

    let stages = manifest_stages(out);
    for s in ["ingest", "mutate", "prep", "train", "parse", "fit-templates", "eval", "report"] {
        assert!(stages.iter().any(|x| x == s), "{s} missing from {stages:?}");
    }

    let report = fs::read_to_string(out.join("report/report.csv")).unwrap();
    assert!(report.lines().count() > 1);
    assert!(report.contains("drain") && report.contains("stateful-lstm"));
}

fn checkpoints(out: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(out.join("healthapp/models"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .collect();
    v.sort();
    v
}

#[test]
fn seed_comes_from_the_environment_unless_given() {
    let dir = tempfile::tempdir().unwrap();
    let env_only = dir.path().join("env");
    let o = run(all(&env_only).env("FLEXLOG_SEED", "3"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        checkpoints(&env_only),
        vec![env_only.join("healthapp/models/stateful-lstm-seed3.ckpt")]
    );

    let flag = dir.path().join("flag");
    let o = run(all(&flag).env("FLEXLOG_SEED", "3").args(["--seed", "5"]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(checkpoints(&flag), vec![flag.join("healthapp/models/stateful-lstm-seed5.ckpt")]);
}

#[test]
fn stepwise_subcommands_match_all() {
    let dir = tempfile::tempdir().unwrap();
    let whole = dir.path().join("whole");
    assert!(run(&mut all(&whole)).status.success());

    let steps = dir.path().join("steps");
    let target = |c: &mut Command| {
        c.args(["--dataset", CONFIG, "--out"]).arg(&steps);
    };
    let step = |args: &[&str]| {
        let mut c = flexlog();
        c.arg(args[0]);
        target(&mut c);
        c.args(&args[1..]);
        let o = run(&mut c);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    };
    step(&["ingest", "--synthetic", "600", "--train-lines", "400", "--test-lines", "200"]);
    step(&["mutate", "--start-lines", "50,100,150"]);
    step(&["prep"]);
    step(&["train", "--model", "stateful-lstm", "--max-epochs", "3", "--patience", "2"]);
    step(&["parse", "--model", "stateful-lstm"]);
    step(&["fit-templates"]);
    step(&[
        "eval",
        "--timing",
        "off",
        "--start-lines",
        "50,100,150",
        "--max-epochs",
        "3",
        "--patience",
        "2",
    ]);
    let o = run(flexlog().args(["report", "--out"]).arg(&steps));
    assert!(o.status.success(), "{}", stderr(&o));

    for rel in [
        "healthapp/test.log",
        "healthapp/vocab.csv",
        "healthapp/models/stateful-lstm-seed7.ckpt",
        "healthapp/predictions/stateful-lstm-seed7-syn-100.csv",
        "healthapp/templates/drain-err-50.txt",
        "eval/matrix.json",
        "report/report.csv",
    ] {
        assert_eq!(fs::read(whole.join(rel)).unwrap(), fs::read(steps.join(rel)).unwrap(), "{rel}");
    }
}
