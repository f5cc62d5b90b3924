use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--nodes-per-type",
    "20",
    "--snapshots",
    "7",
    "--epochs",
    "4",
    "--hidden",
    "8",
    "--heads",
    "2",
    "--runs",
    "2",
];

fn hthgn(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hthgn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .env("HTHGN_LOG", "error")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = hthgn(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn synthetic_train_evaluate_smoke_path() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-synthetic"]);
    ok(dir.path(), &["train"]);
    let summary = ok(dir.path(), &["evaluate"]);
    assert!(summary.contains("AUC"), "{summary}");
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("metrics.json")).unwrap()).unwrap();
    for key in [
        "mode",
        "per_snapshot",
        "mean_auc",
        "std_auc",
        "mean_ap",
        "std_ap",
        "seeds",
    ] {
        assert!(metrics.get(key).is_some(), "missing {key}");
    }
    assert_eq!(metrics["per_snapshot"].as_array().unwrap().len(), 3 * 2);
    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,loss"));
    assert_eq!(history.lines().count(), 5);
    for f in ["config.json", "checkpoint.bin", "timings.csv", "snapshots.tsv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn outputs_are_reproducible_and_independent_of_jobs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, jobs) in [(a.path(), "1"), (b.path(), "3")] {
        ok(dir, &["gen-synthetic"]);
        ok(dir, &["--jobs", jobs, "train"]);
        ok(dir, &["--jobs", jobs, "evaluate"]);
        ok(dir, &["--jobs", jobs, "sweep-p", "--values", "2,8"]);
    }
    for f in [
        "snapshots.tsv",
        "history.csv",
        "checkpoint.bin",
        "metrics.json",
        "sweep.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-synthetic"]);
    ok(dir.path(), &["sweep-p", "--values", "10,50,100"]);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("p,hyperedges,member_sum"));
}

#[test]
fn grad_check_reports_pass() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-synthetic"]);
    let line = ok(dir.path(), &["grad-check", "--k", "2", "--p", "5"]);
    assert!(line.starts_with("PASS: max relative error"), "{line}");
    assert!(dir.path().join("gradcheck.json").exists());
}

#[test]
fn build_hypergraph_and_ablate() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-synthetic"]);
    ok(dir.path(), &["build-hypergraph"]);
    assert!(fs::read_to_string(dir.path().join("expanded.tsv"))
        .unwrap()
        .contains("hyper/"));
    ok(dir.path(), &["ablate", "--variants", "full,no-hyper"]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("ablation.json")).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert_eq!(v[1]["variant"], "no-hyper");
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"kk":3}"#).unwrap();
    let o = hthgn(dir.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kk"));

    let o = hthgn(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    let o = hthgn(dir.path(), &["ablate", "--variants", "no-such"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_data_is_a_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hthgn(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
}
