use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use margindistill::cli::{aggregate, AGGREGATE_CSV_HEADER};
use margindistill::data::{dataset_load, generate_synthetic};
use margindistill::evaluation::{gap_report, MetricsReport, GAP_CSV_HEADER};
use margindistill::network::{checkpoint_load, Role};
use margindistill::training::Method;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_margindistill"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a command expected to fail and returns its stderr.
fn fails(dir: &Path, args: &[&str], code: &str) -> String {
    let out = run(dir, args);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    assert!(err.starts_with(&format!("{code}: ")), "{args:?}: {err}");
    err
}

const SMALL: [&str; 4] = ["--iterations", "120", "--batch-size", "32"];

/// A small dataset and a 16-dimensional teacher trained on it.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--classes", "10", "--per-class", "30", "--dim", "20", "--seed", "9", "--out", "d.mdds"]);
    ok(d, &[&["train-teacher", "--data", "d.mdds", "--out", "t.mdck", "--hidden", "32", "--embedding-dim", "16"][..], &SMALL].concat());
    dir
}

/// Distills from `t.mdck`; `extra` may replace the 16-dimensional embedding.
fn distill(d: &Path, method: &str, out: &str, extra: &[&str]) -> Output {
    let base = ["distill", "--method", method, "--data", "d.mdds", "--teacher", "t.mdck", "--out", out];
    let dim: &[&str] = if extra.contains(&"--embedding-dim") { &[] } else { &["--embedding-dim", "16"] };
    run(d, &[&base[..], dim, &SMALL, extra].concat())
}

#[test]
fn gen_data_preset_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen-data", "--classes", "64", "--per-class", "200", "--dim", "128", "--noise", "0.3", "--seed", "1", "--out", "d.mdds"];
    let summary = ok(dir.path(), &args);
    assert!(summary.contains("12800 samples"), "{summary}");
    let loaded = dataset_load(&dir.path().join("d.mdds")).unwrap();
    assert_eq!(loaded, generate_synthetic(64, 200, 128, 0.3, 1).unwrap());
    let first = fs::read(dir.path().join("d.mdds")).unwrap();
    ok(dir.path(), &args);
    assert_eq!(first, fs::read(dir.path().join("d.mdds")).unwrap());
}

#[test]
fn invalid_generation_parameters() {
    let dir = tempfile::tempdir().unwrap();
    fails(dir.path(), &["gen-data", "--classes", "1", "--out", "d.mdds"], "E_INVALID_CONFIG");
    fails(dir.path(), &["gen-data", "--noise=-1", "--out", "d.mdds"], "E_INVALID_CONFIG");
    fails(dir.path(), &["gen-data", "--classes", "4"], "E_INVALID_CONFIG");
    assert!(!dir.path().join("d.mdds").exists());
}

#[test]
fn parse_errors_and_help() {
    let dir = tempfile::tempdir().unwrap();
    fails(dir.path(), &["distill", "--no-such-flag"], "E_INVALID_CONFIG");
    fails(dir.path(), &["gen-data", "--classes", "many"], "E_INVALID_CONFIG");
    fails(dir.path(), &["frobnicate"], "E_INVALID_CONFIG");
    let help = ok(dir.path(), &["--help"]);
    for cmd in ["gen-data", "train-teacher", "distill", "eval", "compare"] {
        assert!(help.contains(cmd), "{help}");
    }
}

#[test]
fn missing_dataset_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(dir.path(), &["train-teacher", "--data", "nope.mdds", "--out", "t.mdck"], "E_IO");
    assert!(err.contains("nope.mdds"), "{err}");
}

#[test]
fn ranges_are_checked_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    // the dataset does not exist, so reaching it would report E_IO instead
    let d = dir.path();
    fails(d, &["distill", "--method", "margin", "--data", "x", "--out", "s", "--m-min", "0.6", "--m-max", "0.5"], "E_INVALID_CONFIG");
    fails(d, &["distill", "--method", "temp-kd", "--data", "x", "--out", "s", "--temperature", "0"], "E_TEMPERATURE");
    fails(d, &["distill", "--method", "nope", "--data", "x", "--out", "s"], "E_INVALID_CONFIG");
    fails(d, &["train-teacher", "--data", "x", "--out", "t", "--lr=-1"], "E_INVALID_CONFIG");
    fails(d, &["train-teacher", "--data", "x", "--out", "t", "--batch-size", "1"], "E_INVALID_CONFIG");
}

#[test]
fn teacher_checkpoint_metrics_and_determinism() {
    let dir = workspace();
    let d = dir.path();
    let ck = checkpoint_load(&d.join("t.mdck")).unwrap();
    assert_eq!(ck.role, Role::Teacher);
    assert_eq!(ck.meta.method, "arcface");
    let metrics = fs::read_to_string(d.join("t.mdck.metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 120);
    let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert_eq!(first["iteration"], 0);
    let bytes = fs::read(d.join("t.mdck")).unwrap();
    ok(d, &[&["train-teacher", "--data", "d.mdds", "--out", "t2.mdck", "--hidden", "32", "--embedding-dim", "16"][..], &SMALL].concat());
    assert_eq!(bytes, fs::read(d.join("t2.mdck")).unwrap());
}

#[test]
fn distill_methods_record_their_name() {
    let dir = workspace();
    let d = dir.path();
    for m in Method::ALL {
        let out = format!("{}.mdck", m.name());
        let res = distill(d, m.name(), &out, &[]);
        assert!(res.status.success(), "{m}: {}", String::from_utf8_lossy(&res.stderr));
        let ck = checkpoint_load(&d.join(&out)).unwrap();
        assert_eq!(ck.role, Role::Student);
        assert_eq!(ck.meta.method, m.name());
        assert_eq!(ck.params.embedding_dim(), 16);
    }
}

#[test]
fn distill_teacher_requirements() {
    let dir = workspace();
    let d = dir.path();
    let base = ["distill", "--data", "d.mdds", "--out", "s.mdck", "--embedding-dim", "16"];
    ok(d, &[&base[..], &["--method", "arcface"], &SMALL].concat());
    fails(d, &[&base[..], &["--method", "margin"], &SMALL].concat(), "E_MISSING_TEACHER");
    let res = distill(d, "margin", "s.mdck", &["--embedding-dim", "8"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("E_DIM_MISMATCH: "));
    let res = distill(d, "angular", "s.mdck", &["--embedding-dim", "8"]);
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("E_DIM_MISMATCH: "));
}

#[test]
fn temperature_defaults_to_four() {
    let dir = workspace();
    let d = dir.path();
    assert!(distill(d, "temp-kd", "a.mdck", &[]).status.success());
    assert!(distill(d, "temp-kd", "b.mdck", &["--temperature", "4"]).status.success());
    assert!(distill(d, "temp-kd", "c.mdck", &["--temperature", "2"]).status.success());
    let read = |f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.mdck"), read("b.mdck"));
    assert_ne!(read("a.mdck"), read("c.mdck"));
}

#[test]
fn eval_reports_feed_gap_report() {
    let dir = workspace();
    let d = dir.path();
    assert!(distill(d, "margin", "s.mdck", &[]).status.success());
    ok(d, &["eval", "--checkpoint", "t.mdck", "--data", "d.mdds", "--out-json", "t.json"]);
    ok(d, &["eval", "--checkpoint", "s.mdck", "--data", "d.mdds", "--out-json", "s.json", "--out-csv", "s-report.csv"]);
    let load = |f: &str| -> MetricsReport { serde_json::from_str(&fs::read_to_string(d.join(f)).unwrap()).unwrap() };
    let (t, s) = (load("t.json"), load("s.json"));
    assert_eq!(t.method, "teacher");
    assert_eq!(s.method, "margin");
    let gap = gap_report(&t, std::slice::from_ref(&s)).unwrap();
    assert_eq!(gap.rows.len(), 2);
    let csv = fs::read_to_string(d.join("s-report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("margin,"));
    let before = fs::read(d.join("s.json")).unwrap();
    ok(d, &["eval", "--checkpoint", "s.mdck", "--data", "d.mdds", "--out-json", "s.json", "--out-csv", "s-report.csv"]);
    assert_eq!(before, fs::read(d.join("s.json")).unwrap());
    // a different protocol draw is rejected when mixed with the original
    ok(d, &["eval", "--checkpoint", "s.mdck", "--data", "d.mdds", "--out-json", "s2.json", "--protocol-seed", "77"]);
    assert!(gap_report(&t, &[load("s2.json")]).is_err());
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let dir = workspace();
    let d = dir.path();
    let mut bytes = fs::read(d.join("t.mdck")).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(d.join("bad.mdck"), bytes).unwrap();
    fails(d, &["eval", "--checkpoint", "bad.mdck", "--data", "d.mdds", "--out-json", "r.json"], "E_CORRUPT_CHECKPOINT");
    assert!(!d.join("r.json").exists());
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("gen.json"), r#"{"version": 1, "classes": 5, "per_class": 10, "dim": 6, "seed": 3, "out": "a.mdds"}"#).unwrap();
    ok(d, &["gen-data", "--config", "gen.json"]);
    ok(d, &["gen-data", "--config", "gen.json", "--classes", "7", "--out", "b.mdds"]);
    assert_eq!(dataset_load(&d.join("a.mdds")).unwrap().classes, 5);
    let b = dataset_load(&d.join("b.mdds")).unwrap();
    assert_eq!((b.classes, b.input_dim(), b.seed), (7, 6, 3));
    fs::write(d.join("bad.json"), r#"{"version": 1, "clases": 5}"#).unwrap();
    fails(d, &["gen-data", "--config", "bad.json"], "E_INVALID_CONFIG");
    fs::write(d.join("old.json"), r#"{"classes": 5}"#).unwrap();
    fails(d, &["gen-data", "--config", "old.json"], "E_INVALID_CONFIG");
    fails(d, &["gen-data", "--config", "missing.json"], "E_IO");
}

#[test]
fn compare_writes_tables_that_agree_with_per_seed_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--classes", "10", "--per-class", "30", "--dim", "20", "--seed", "9", "--out", "d.mdds"]);
    let args = [&["compare", "--data", "d.mdds", "--seed", "4", "--teacher-hidden", "32", "--embedding-dim", "16"][..], &SMALL];
    let table = ok(d, &[args.concat(), vec!["--seeds", "1", "--out-dir", "cmp"]].concat());
    assert!(table.contains("margin"), "{table}");
    let csv = fs::read_to_string(d.join("cmp/comparison.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(GAP_CSV_HEADER));
    assert_eq!(lines.count(), 7);

    ok(d, &[args.concat(), vec!["--seeds", "2", "--out-dir", "cmp2"]].concat());
    let csv = fs::read_to_string(d.join("cmp2/comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 14);
    let mut reports = Vec::new();
    for seed in [4, 5] {
        for name in std::iter::once("teacher").chain(Method::ALL.iter().map(|m| m.name())) {
            let path = d.join(format!("cmp2/seed-{seed}/{name}.json"));
            let r: MetricsReport = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
            assert_eq!((r.seed, r.method.as_str()), (seed, name));
            reports.push(r);
        }
    }
    // recompute mean and sample standard deviation from the JSON files
    let agg = fs::read_to_string(d.join("cmp2/aggregate.csv")).unwrap();
    let mut rows = agg.lines();
    assert_eq!(rows.next(), Some(AGGREGATE_CSV_HEADER));
    let rows: Vec<Vec<String>> = rows.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 7);
    for row in &rows {
        let group: Vec<&MetricsReport> = reports.iter().filter(|r| r.method == row[0]).collect();
        assert_eq!(group.len(), 2);
        for (col, pick) in [(2, 0usize), (4, 1)] {
            let vals: Vec<f64> = group
                .iter()
                .map(|r| if pick == 0 { r.verification_accuracy } else { r.rank1_accuracy })
                .collect();
            let mean = (vals[0] + vals[1]) / 2.0;
            let std = ((vals[0] - mean).powi(2) + (vals[1] - mean).powi(2)).sqrt();
            let got_mean: f64 = row[col].parse().unwrap();
            let got_std: f64 = row[col + 1].parse().unwrap();
            assert!((got_mean - mean).abs() < 1e-12, "{row:?}");
            assert!((got_std - std).abs() < 1e-12, "{row:?}");
        }
    }
    assert_eq!(aggregate(&reports).len(), 7);
}
