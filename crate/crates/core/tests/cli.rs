use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
  "data.synthetic.per_class": 40, "data.train_per_class": 20, "coarse.sets": 200, "pretrain.epochs": 2,
  "eval.tasks": 20, "eval.arms": [{"classifier": "nearest_centroid"}, {"classifier": "ridge", "la": true}],
  "eval.la.count": 5, "risk.tasks": 10, "risk.m0": 1, "risk.query": 5, "diagnose.pairs": 30
}"#;

fn facile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facile")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let mut v: Value = serde_json::from_str(SMALL).unwrap();
    if !extra.is_empty() {
        let e: Value = serde_json::from_str(extra).unwrap();
        v.as_object_mut().unwrap().extend(e.as_object().unwrap().clone());
    }
    let path = dir.join("config.json");
    std::fs::write(&path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn run(cmd: &str, cfg: &str, out: &Path) -> Output {
    facile(&[cmd, "--config", cfg, "--out", out.to_str().unwrap()])
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn selftest_passes() {
    let o = facile(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("10 passed"));
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&facile(&["--help"])), 0);
    assert_eq!(code(&facile(&["--version"])), 0);
}

#[test]
fn missing_config_names_the_path() {
    let o = facile(&["pretrain", "--config", "/no/such/dir/cfg.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("/no/such/dir/cfg.json"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_prints_usage() {
    let o = facile(&["selftest", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(code(&facile(&["no-such-command"])), 1);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"eval.taskz": 3}"#).unwrap();
    let o = facile(&["evaluate", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("taskz"), "{}", stderr(&o));
}

#[test]
fn evaluate_without_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let o = run("evaluate", &cfg, &dir.path().join("empty"));
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

fn pipeline(dir: &Path, cfg: &str, seed: &str) -> Vec<u8> {
    for cmd in ["gen-data", "pretrain", "evaluate"] {
        let o = facile(&[cmd, "--config", cfg, "--out", dir.to_str().unwrap(), "--seed", seed]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
    std::fs::read(dir.join("summary.json")).unwrap()
}

#[test]
fn pretrain_then_evaluate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let a = pipeline(&dir.path().join("a"), &cfg, "7");
    let b = pipeline(&dir.path().join("b"), &cfg, "7");
    assert_eq!(a, b);
    let c = pipeline(&dir.path().join("c"), &cfg, "8");
    assert_ne!(a, c);

    let summary: Value = serde_json::from_slice(&a).unwrap();
    for arm in ["NC", "RC+LA"] {
        let s = &summary[arm];
        for key in ["mean_f1", "mean_acc", "ci95"] {
            let v = s[key].as_f64().unwrap_or_else(|| panic!("{arm}.{key} missing"));
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(s["tasks"], 20);
    }
    let out = dir.path().join("a");
    for file in ["data_summary.json", "data.json", "coarse.json", "checkpoint.json", "manifest.json", "tasks.csv"] {
        assert!(out.join(file).exists(), "{file}");
    }
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["pretrain"]["epochs"], 2);
    assert_eq!(manifest["seeds"]["pretrain"], 9);
    let tasks = std::fs::read_to_string(out.join("tasks.csv")).unwrap();
    assert_eq!(tasks.lines().count(), 1 + 2 * 20);
}

#[test]
fn risk_curve_writes_both_growths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let o = run("risk-curve", &cfg, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("risk_curve.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "growth,n,m,error");
    assert_eq!(rows.len(), 1 + 2 * 3);
    let summary = read_json(&dir.path().join("risk_summary.json"));
    for growth in ["linear", "quadratic"] {
        assert!(summary[growth]["gamma"].as_f64().unwrap().is_finite(), "{summary}");
    }
}

#[test]
fn impossible_task_shapes_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"{"risk.query": 15}"#);
    let o = run("risk-curve", &cfg, dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn diagnose_reports_both_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let o = run("diagnose", &cfg, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&dir.path().join("diagnostics.json"));
    let eps = report["central"]["estimate"]["epsilon"].as_f64().unwrap();
    assert!(eps >= 0.0);
    assert_eq!(report["lipschitz"]["samples"], 30);
    assert_eq!(report["lipschitz"]["label"], "lower-bound surrogate");
}
