use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_groupform"));
    cmd.env_remove("GROUPFORM_OUT");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn groupform")
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/example2.json")
}

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/example2_seed7.jsonl")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn simulate_example2(dir: &Path, seed: &str) -> PathBuf {
    let out = run(&[
        "simulate",
        "--scenario",
        s(&fixture()),
        "--seed",
        seed,
        "--out",
        s(dir),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    dir.join("trace.jsonl")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_matches_golden_trace() {
    let dir = TempDir::new().unwrap();
    let trace = simulate_example2(dir.path(), "7");
    let got = std::fs::read_to_string(trace).unwrap();
    let want = std::fs::read_to_string(golden()).unwrap();
    assert_eq!(got, want);
}

#[test]
fn simulate_prints_metrics() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "simulate",
        "--scenario",
        s(&fixture()),
        "--seed",
        "7",
        "--out",
        s(dir.path()),
    ]);
    let metrics = stdout_json(&out);
    assert_eq!(metrics["converged"], true);
    assert!(metrics["num_groups"].as_u64().unwrap() >= 4);
}

#[test]
fn simulate_generated_scenario_writes_it() {
    let dir = TempDir::new().unwrap();
    let out = bin()
        .args([
            "simulate", "--seed", "3", "--m", "2", "--x-max", "4", "--r-max", "30",
        ])
        .env("GROUPFORM_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("scenario.json").exists());
    let out = run(&[
        "verify",
        "--scenario",
        s(&dir.path().join("scenario.json")),
        "--trace",
        s(&dir.path().join("trace.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn missing_scenario_exits_2() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.json");
    let out = run(&[
        "simulate",
        "--scenario",
        s(&missing),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&["simulate", "--seed", "abc"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn budget_exhaustion_exits_3_with_partial_trace() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "simulate",
        "--scenario",
        s(&fixture()),
        "--max-iterations",
        "1",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let text = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2]["record"], "footer");
    assert_eq!(lines[2]["converged"], false);
}

#[test]
fn verify_converged_trace_is_ise() {
    let dir = TempDir::new().unwrap();
    let trace = simulate_example2(dir.path(), "11");
    let out = run(&["verify", "--scenario", s(&fixture()), "--trace", s(&trace)]);
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    assert_eq!(report["is_ise"], true);
    assert_eq!(report["violations"].as_array().unwrap().len(), 0);
}

const PAIR: &str = r#"{"format_version":1,"k":2,"agents":[
  {"id":0,"category":0,"resource":5.0,"x":0.0,"y":0.0},
  {"id":1,"category":1,"resource":5.0,"x":0.0,"y":0.0}]}"#;

#[test]
fn verify_flags_unstable_partition() {
    let dir = TempDir::new().unwrap();
    let scenario = write(&dir, "pair.json", PAIR);
    let partition = write(&dir, "p.json", r#"{"format_version":1,"groups":[[0],[1]]}"#);
    let out = run(&[
        "verify",
        "--scenario",
        s(&scenario),
        "--partition",
        s(&partition),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let report = stdout_json(&out);
    assert_eq!(report["is_ise"], false);
    assert_eq!(report["violations"].as_array().unwrap().len(), 2);

    let joined = write(&dir, "q.json", r#"{"format_version":1,"groups":[[0,1]]}"#);
    let out = run(&[
        "verify",
        "--scenario",
        s(&scenario),
        "--partition",
        s(&joined),
    ]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn verify_rejects_unknown_agent() {
    let dir = TempDir::new().unwrap();
    let scenario = write(&dir, "pair.json", PAIR);
    let partition = write(
        &dir,
        "p.json",
        r#"{"format_version":1,"groups":[[0],[1],[7]]}"#,
    );
    let out = run(&[
        "verify",
        "--scenario",
        s(&scenario),
        "--partition",
        s(&partition),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_scenario_exits_2() {
    let dir = TempDir::new().unwrap();
    let bad = write(
        &dir,
        "bad.json",
        r#"{"format_version":1,"k":2,"agents":[{"id":0,"category":0,"resource":-1.0,"x":0.0,"y":0.0}]}"#,
    );
    let out = run(&["simulate", "--scenario", s(&bad), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

fn count(doc: &roxmltree::Document, group: &str, tags: &[&str]) -> usize {
    doc.descendants()
        .find(|n| n.attribute("id") == Some(group))
        .map_or(0, |g| {
            g.descendants()
                .filter(|n| n.is_element() && tags.contains(&n.tag_name().name()))
                .count()
        })
}

#[test]
fn render_keyframes() {
    let dir = TempDir::new().unwrap();
    let trace = simulate_example2(dir.path(), "7");
    let frames = dir.path().join("frames");
    let out = run(&[
        "render",
        "--scenario",
        s(&fixture()),
        "--trace",
        s(&trace),
        "--keyframes",
        "--out",
        s(&frames),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let first = std::fs::read_to_string(frames.join("frame_0000.svg")).unwrap();
    let doc = roxmltree::Document::parse(&first).unwrap();
    assert_eq!(count(&doc, "agents", &["rect", "circle", "polygon"]), 9);
    assert_eq!(count(&doc, "groups", &["polygon", "polyline"]), 0);

    let mut names: Vec<String> = std::fs::read_dir(&frames)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let last = std::fs::read_to_string(frames.join(names.last().unwrap())).unwrap();
    let doc = roxmltree::Document::parse(&last).unwrap();
    assert!(count(&doc, "groups", &["polygon", "polyline"]) >= 1);
}

#[test]
fn render_unknown_iteration_exits_1() {
    let dir = TempDir::new().unwrap();
    let trace = simulate_example2(dir.path(), "7");
    let out = run(&[
        "render",
        "--scenario",
        s(&fixture()),
        "--trace",
        s(&trace),
        "--iterations",
        "0,100000",
        "--out",
        s(&dir.path().join("frames")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn render_single_agent() {
    let dir = TempDir::new().unwrap();
    let scenario = write(
        &dir,
        "one.json",
        r#"{"format_version":1,"k":2,"agents":[{"id":0,"category":1,"resource":3.0,"x":2.0,"y":2.0}]}"#,
    );
    let out = run(&[
        "simulate",
        "--scenario",
        s(&scenario),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let frames = dir.path().join("frames");
    let out = run(&[
        "render",
        "--scenario",
        s(&scenario),
        "--trace",
        s(&dir.path().join("trace.jsonl")),
        "--out",
        s(&frames),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let svg = std::fs::read_to_string(frames.join("frame_0000.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(count(&doc, "agents", &["rect", "circle", "polygon"]), 1);
}

#[test]
fn replay_reproduces_trace() {
    let dir = TempDir::new().unwrap();
    let trace = simulate_example2(dir.path(), "5");
    let out = run(&["replay", "--scenario", s(&fixture()), "--trace", s(&trace)]);
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    assert_eq!(report["identical"], true);
    assert!(report["first_divergent_iteration"].is_null());
}

#[test]
fn replay_detects_digest_mismatch() {
    let dir = TempDir::new().unwrap();
    let trace = simulate_example2(dir.path(), "5");
    let text = std::fs::read_to_string(fixture())
        .unwrap()
        .replace("\"resource\": 10.0", "\"resource\": 11.0");
    let other = write(&dir, "other.json", &text);
    let out = run(&["replay", "--scenario", s(&other), "--trace", s(&trace)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_single_cell() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "sweep",
        "--x-max",
        "10",
        "--r-max",
        "20",
        "--replications",
        "5",
        "--threads",
        "2",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap())
            .unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 1);
    assert!(dir.path().join("trends.json").exists());
    let trends = stdout_json(&out);
    assert!(trends["sectors_vs_size"].is_null());
}
