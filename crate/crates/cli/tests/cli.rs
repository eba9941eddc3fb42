//! The binary end to end: run, replay and oracle on shipped scenarios.

use std::path::PathBuf;
use std::process::Command;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn vader(args: &[&str]) -> (bool, serde_json::Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_vader")).args(args).output().expect("spawn");
    let report = serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stderr));
    });
    (out.status.success(), report)
}

#[test]
fn run_then_replay_agree() {
    let dir = std::env::temp_dir().join(format!("vader-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let trace = dir.join("trace.jsonl");
    let s = scenario("scenario-a");
    let (ok, run) = vader(&[
        "run",
        "--scenario",
        s.to_str().unwrap(),
        "--seed",
        "3",
        "--trials",
        "2",
        "--trace-out",
        trace.to_str().unwrap(),
    ]);
    assert!(ok);
    assert_eq!(run["completed"], 2);
    let (ok, replay) = vader(&["replay", "--trace", trace.to_str().unwrap()]);
    assert!(ok);
    assert_eq!(run, replay);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn oracle_reports_the_pilot_probability() {
    let s = scenario("pilot");
    let (ok, v) = vader(&["oracle", "--scenario", s.to_str().unwrap()]);
    assert!(ok);
    let text = v.to_string();
    assert!(text.contains("0.545"), "{text}");
}

#[test]
fn missing_scenario_is_an_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_vader"))
        .args(["run", "--scenario", "/nonexistent.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
