use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sgl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgl")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL: &[&str] = &["--num-fields", "4", "--vocab-per-field", "30", "--num-samples", "2000", "--epochs", "1"];

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL.iter().copied()).collect()
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn prox_selftest_passes_with_exit_zero() {
    let out = sgl(&["prox-selftest", "--cases", "100", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("100/100"));
}

#[test]
fn unknown_flag_is_a_config_error() {
    assert_eq!(code(&sgl(&["train", "--no-such-flag"])), 2);
}

#[test]
fn invalid_values_are_config_errors() {
    assert_eq!(code(&sgl(&with_small(&["train", "--lr=-1"]))), 2);
    assert_eq!(code(&sgl(&with_small(&["train", "--optimizer", "rmsprop"]))), 2);
    assert_eq!(code(&sgl(&with_small(&["train", "--preset", "nope"]))), 2);
    assert_eq!(code(&sgl(&["regret", "--horizon", "0"])), 2);
}

#[test]
fn malformed_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"epochs": "three"}"#);
    let out = sgl(&["train", "--config", &cfg]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));
}

#[test]
fn divergent_training_exits_with_numeric_code() {
    let out = sgl(&with_small(&["train", "--optimizer", "adam", "--lr", "1e200"]));
    assert_eq!(code(&out), 3);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "epochs": 3,
            "batch_size": 64,
            "seed": 5,
            "data": {"synthetic": {"num_fields": 4, "vocab_per_field": 30,
                                   "informative_fraction": 0.2, "num_samples": 2000}}
        }"#,
    );
    let out_dir = dir.path().join("run");
    let out = sgl(&[
        "train",
        "--config",
        &cfg,
        "--epochs",
        "1",
        "--optimizer",
        "group-adagrad",
        "--lambda21",
        "0.002",
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&out_dir.join("report.json"));
    let config = &report["config"];
    assert_eq!(config["epochs"], 1);
    assert_eq!(config["batch_size"], 64);
    assert_eq!(config["seed"], 5);
    assert_eq!(config["reg"]["lambda21"], 0.002);
    assert_eq!(report["optimizer"], "group-adagrad");

    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "epoch,logloss,auc,sparsity,nonzero_groups,wall_ms");
    assert_eq!(lines.count(), 1);
    assert!(out_dir.join("checkpoint.json").exists());
}

#[test]
fn repeats_report_mean_and_stddev() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("rep");
    let out = sgl(&with_small(&["train", "--repeats", "3", "--output-dir", out_dir.to_str().unwrap()]));
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("±"));
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["runs"].as_array().unwrap().len(), 3);
    let auc = &report["aggregate"]["auc"];
    assert!(auc["stddev"].as_f64().unwrap() > 0.0);
    let aucs: Vec<f64> = report["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["epochs"].as_array().unwrap().last().unwrap()["auc"].as_f64().unwrap())
        .collect();
    let mean = aucs.iter().sum::<f64>() / 3.0;
    assert!((auc["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!(out_dir.join("metrics_rep2.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = sgl(&with_small(&[
        "sweep",
        "--optimizer",
        "group-adam",
        "--grid",
        "0.0001,0.01,1",
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn prune_baseline_needs_a_target() {
    assert_eq!(code(&sgl(&with_small(&["prune-baseline"]))), 2);
    let out = sgl(&with_small(&["prune-baseline", "--target-keep", "20"]));
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("keep 20"));
}

#[test]
fn regret_writes_curve_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("regret");
    let out = sgl(&[
        "regret",
        "--horizon",
        "512",
        "--repeats",
        "2",
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let summary = read_json(&out_dir.join("regret.json"));
    assert_eq!(summary.as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(out_dir.join("regret.csv")).unwrap();
    assert!(csv.lines().count() > 2);
}
