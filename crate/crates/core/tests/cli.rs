use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL_DATA: &str = "\
seed = 4
n_train = 240
n_test = 60
n_features = 20
";

const SMALL_MODEL: &str = "\
max_epochs = 60
hidden_units = 16
";

fn dcws<S: AsRef<OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcws")).args(args).output().expect("binary runs")
}

fn ok<S: AsRef<OsStr>>(args: &[S]) -> String {
    let out = dcws(args);
    let shown: Vec<_> = args.iter().map(|a| a.as_ref().to_string_lossy()).collect();
    assert!(out.status.success(), "{shown:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A generated benchmark plus a fit config, in a fresh directory.
fn bench() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, SMALL_DATA).unwrap();
    fs::write(dir.path().join("fit.toml"), format!("seed = 9\n{SMALL_MODEL}")).unwrap();
    let data = dir.path().join("bench");
    ok(&["generate", "--spec", s(&spec), "--out", s(&data)]);
    (dir, data)
}

fn fit(dir: &Path, data: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(out);
    let mut args: Vec<String> = vec!["fit".into()];
    for (flag, path) in [
        ("--features", data.join("train_features.csv")),
        ("--signals", data.join("signals.csv")),
        ("--meta", data.join("meta.json")),
        ("--config", dir.join("fit.toml")),
        ("--out", out.clone()),
    ] {
        args.push(flag.into());
        args.push(s(&path).into());
    }
    args.extend(extra.iter().map(|a| a.to_string()));
    ok(&args);
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_writes_a_consistent_benchmark() {
    let (_dir, data) = bench();
    let manifest = json(&data.join("manifest.json"));
    assert_eq!(manifest["spec"]["seed"], 4);
    assert_eq!(manifest["realized_errors"].as_array().unwrap().len(), 10);
    let rows = |f: &str| fs::read_to_string(data.join(f)).unwrap().lines().count();
    assert_eq!(rows("train_features.csv"), 240);
    assert_eq!(rows("signals.csv"), 240);
    assert_eq!(rows("train_labels.csv"), 240);
    assert_eq!(rows("test_features.csv"), 60);
}

#[test]
fn fit_then_eval_round_trip() {
    let (dir, data) = bench();
    let truth = data.join("train_labels.csv");
    let out = fit(dir.path(), &data, "fit", &["--truth", s(&truth)]);
    for f in ["labels.csv", "model.json", "metrics.json", "train.log"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(fs::read_to_string(out.join("labels.csv")).unwrap().lines().count(), 240);
    let metrics = json(&out.join("metrics.json"));
    let epochs = metrics["epochs"].as_u64().unwrap() as usize;
    assert!(epochs <= 60);
    assert_eq!(fs::read_to_string(out.join("train.log")).unwrap().lines().count(), epochs + 1);
    assert!(metrics["lambda"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap() >= 0.0));
    assert!(metrics["label_accuracy"].as_f64().is_some());
    assert_eq!(metrics["config"]["solver"]["seed"], 9);

    let printed = ok(&[
        "eval",
        "--model",
        s(&out.join("model.json")),
        "--features",
        s(&data.join("test_features.csv")),
        "--labels",
        s(&data.join("test_labels.csv")),
    ]);
    let eval: Value = serde_json::from_str(&printed).unwrap();
    let acc = eval["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(eval["n_examples"], 60);
}

#[test]
fn fit_output_is_byte_identical_across_runs() {
    let (dir, data) = bench();
    let a = fit(dir.path(), &data, "a", &["--plus"]);
    let b = fit(dir.path(), &data, "b", &["--plus"]);
    for f in ["labels.csv", "model.json", "metrics.json", "train.log"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn fit_options_reach_the_solver() {
    let (dir, data) = bench();
    let bounds = dir.path().join("bounds.csv");
    fs::write(&bounds, "0.4\n".repeat(10)).unwrap();
    let out = fit(dir.path(), &data, "opts", &["--bounds", s(&bounds), "--plus", "--prior", "none"]);
    let metrics = json(&out.join("metrics.json"));
    assert_eq!(metrics["n_fit"], 240);
    assert_eq!(metrics["plus"], true);
    assert_eq!(metrics["config"]["solver"]["prior_mode"], "none");
}

#[test]
fn experiment_and_ablation_write_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(
        &config,
        format!("{SMALL_DATA}{SMALL_MODEL}trials = 2\nend_model_hidden_units = 8\nend_model_epochs = 5\n"),
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["experiment", "--config", s(&config), "--out", s(&a)]);
    ok(&["experiment", "--config", s(&config), "--out", s(&b)]);
    let bytes = fs::read(a.join("metrics.json")).unwrap();
    assert_eq!(bytes, fs::read(b.join("metrics.json")).unwrap());
    let metrics = json(&a.join("metrics.json"));
    assert_eq!(metrics["per_trial"].as_array().unwrap().len(), 2);
    assert!(metrics["test_accuracy_mean"].as_f64().is_some());

    fs::write(&config, format!("{SMALL_DATA}{SMALL_MODEL}train_end_model = false\n")).unwrap();
    ok(&["ablate", "--spec", s(&config), "--out", s(&a)]);
    let ablation = json(&a.join("ablation.json"));
    assert_eq!(ablation["arms"].as_array().unwrap().len(), 13);
}

#[test]
fn failures_exit_nonzero_with_a_diagnostic() {
    let (dir, data) = bench();
    let missing = dir.path().join("missing.csv");
    let out = dcws(&[
        "fit",
        "--features",
        s(&missing),
        "--signals",
        s(&data.join("signals.csv")),
        "--meta",
        s(&data.join("meta.json")),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: ") && stderr.contains("missing.csv"), "{stderr}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    let out = dcws(&["generate", "--spec", s(&bad), "--out", s(&dir.path().join("y"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = dcws(&["fit", "--bounds", "b.csv", "--bounds-zero"]);
    assert!(!out.status.success());
}
