//! The `align` binary: exit codes and subcommand output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn align(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_align"))
        .args(args)
        .current_dir(root())
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs a sample config with its output redirected into `dir`.
fn run_sample(config: &str, dir: &Path, name: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join(format!("{name}.jsonl"));
    let output_override = format!("output={}", out.display());
    let mut args = vec!["run", "--config", config, output_override.as_str()];
    args.extend_from_slice(extra);
    (align(&args), out)
}

#[test]
fn clean_run_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (o, log) = run_sample("samples/configs/baseline_mock.toml", dir.path(), "base", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("0 failures"));
    let text = std::fs::read_to_string(log).unwrap();
    let header: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["run_id"], "baseline-mock");
}

#[test]
fn unreachable_backend_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (o, log) = run_sample(
        "samples/configs/http_chat.toml",
        dir.path(),
        "http",
        &["adm.backend.endpoint=http://127.0.0.1:9/v1", "adm.backend.timeout_ms=2000"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let text = std::fs::read_to_string(log).unwrap();
    assert!(text.lines().skip(1).all(|l| l.contains("\"error\"")));
}

#[test]
fn fatal_errors_exit_one() {
    let o = align(&["run", "--config", "samples/configs/baseline_mock.toml", "adm.bananas=3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("adm.bananas"), "{}", stderr(&o));

    let o = align(&["run", "--config", "samples/configs/baseline_mock.toml", "no-equals-sign"]);
    assert_eq!(o.status.code(), Some(1));

    let o = align(&["run", "--config", "does/not/exist.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validate_reports_violations() {
    let o = align(&["validate", "--dataset", "samples/datasets/triage_demo.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("is valid"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"id":"bad","domain":"medical-triage","scenarios":[
            {"id":"x","domain":"medical-triage","context":"","question":"q",
             "choices":[{"index":0,"text":"a"}],
             "labels":{"moral_desert=high":[3]}}]}"#,
    )
    .unwrap();
    let o = align(&["validate", "--dataset", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().count() >= 2, "{}", stdout(&o));
}

#[test]
fn score_and_compare_logs() {
    let dir = tempfile::tempdir().unwrap();
    let (o, high) = run_sample("samples/configs/aligned_mock.toml", dir.path(), "high", &["filter=null"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (o, base) = run_sample("samples/configs/baseline_mock.toml", dir.path(), "base", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = align(&[
        "score",
        "--log",
        high.to_str().unwrap(),
        "--dataset",
        "samples/datasets/triage_demo.json",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let keys: Vec<&String> = report["per_attribute"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["moral_desert=high"]);

    let o = align(&["score", "--log", high.to_str().unwrap(), "--dataset", "samples/datasets/triage_demo.json"]);
    assert!(stdout(&o).contains("moral_desert=high"));

    let o = align(&["compare", "--log-a", base.to_str().unwrap(), "--log-b", high.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep["run_a"], "baseline-mock");
    assert!(rep["shared"].as_u64().unwrap() > 0);
}

#[test]
fn export_radar_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (_, high) = run_sample("samples/configs/aligned_mock.toml", dir.path(), "high", &[]);
    let (_, low) = run_sample(
        "samples/configs/aligned_mock.toml",
        dir.path(),
        "low",
        &["target.value=low", "filter=moral_desert=low"],
    );
    let series = format!("aligned={},{}", high.display(), low.display());
    let csv = dir.path().join("radar.csv");
    let o = align(&[
        "export-radar",
        "--dataset",
        "samples/datasets/triage_demo.json",
        "--series",
        &series,
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("attribute,aligned"));
    assert!(lines.next().unwrap().starts_with("moral_desert,"));

    let o = align(&["export-radar", "--dataset", "samples/datasets/triage_demo.json", "--series", "no-equals"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn override_reaches_the_log_header() {
    let dir = tempfile::tempdir().unwrap();
    let (o, log) = run_sample("samples/configs/baseline_mock.toml", dir.path(), "seeded", &["adm.backend.mock.seed=8"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(log).unwrap();
    let header: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["config"]["adm"]["backend"]["mock"]["seed"], 8);
}
