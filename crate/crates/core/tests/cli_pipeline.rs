use std::path::Path;
use std::process::{Command, Output};

fn dlotrack(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlotrack"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dlotrack(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn simulate_track_eval_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--scenario", "straight_static", "--out", "d.jsonl"]);
    ok(d, &["track", "--dataset", "d.jsonl", "--out-trace", "t.csv"]);
    assert!(d.join("t.csv").exists());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("t.summary.json")).unwrap()).unwrap();
    assert_eq!(report["failed"], 0);

    let eval: serde_json::Value = serde_json::from_str(&ok(d, &["--json", "eval", "--trace", "t.csv"])).unwrap();
    assert!(eval.is_object(), "{eval}");

    ok(d, &["plot", "--trace", "t.csv", "--out", "p.svg"]);
    let svg = std::fs::read_to_string(d.join("p.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn missing_dataset_fails_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dlotrack(dir.path(), &["--json", "track", "--dataset", "none.jsonl", "--out-trace", "t.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["error"].as_str().unwrap().contains("none.jsonl"));
}

#[test]
fn unknown_scenario_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dlotrack(dir.path(), &["simulate", "--scenario", "no_such_preset", "--out", "d.jsonl"]);
    assert!(!out.status.success());
    assert!(!dir.path().join("d.jsonl").exists());
}

#[test]
fn bad_arguments_use_usage_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dlotrack(dir.path(), &["track"]);
    assert_eq!(out.status.code(), Some(2));
}
