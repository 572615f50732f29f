use std::io::Write;

use serde_json::{json, Value};

use scgrpo::service::{score_file, ScoreFileError};
use scgrpo::RewardEngine;

fn fixture() -> Vec<Value> {
    let normal = json!({"label": "normal"});
    let anomalous = json!({"label": "anomalous", "location": "top right", "type": "hole"});
    let outputs = [
        ("<think>uniform</think><answer>No</answer>", &normal),
        ("<think>uniform</think><answer>Yes</answer>", &normal),
        ("no tags at all", &normal),
        ("<think>hole</think><location>top right</location><type>hole</type><answer>Yes</answer>", &anomalous),
        ("<think>hole</think><location>bottom left</location><type>hole</type><answer>yes</answer>", &anomalous),
        ("<think>hole</think><location>upper right</location><type>puncture</type><answer>Yes</answer>", &anomalous),
        ("<think>hole</think><location>top right</location><type>scratch</type><answer>Yes</answer>", &anomalous),
        ("<think>fine</think><answer>No</answer>", &anomalous),
        ("<think>x</think><answer>maybe</answer>", &anomalous),
    ];
    let mut lines: Vec<Value> = outputs
        .iter()
        .enumerate()
        .map(|(i, (raw, gt))| json!({"id": format!("r{i}"), "raw_output": raw, "ground_truth": gt}))
        .collect();
    lines.push(json!({
        "image": "img/10.png",
        "prompt": "Is there a defect?",
        "target": "<think>clean</think><answer>No</answer>",
        "ground_truth": normal,
    }));
    lines
}

fn write_lines(dir: &tempfile::TempDir, name: &str, lines: &[Value]) -> std::path::PathBuf {
    let path = dir.path().join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    path
}

#[test]
fn summary_matches_per_line_scores() {
    let dir = tempfile::tempdir().unwrap();
    let lines = fixture();
    let input = write_lines(&dir, "in.jsonl", &lines);
    let output = dir.path().join("out.jsonl");
    let engine = RewardEngine::default();
    let summary = score_file(&input, &output, &engine).unwrap();

    let text = std::fs::read_to_string(&output).unwrap();
    let results: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(results.len(), 10);
    assert_eq!(summary.lines, 10);
    assert_eq!(results[9]["id"], "line-10");

    let total: f64 = results.iter().map(|r| r["total"].as_f64().unwrap()).sum();
    assert!((summary.sum.total - total).abs() < 1e-12);
    assert!((summary.mean_total - total / 10.0).abs() < 1e-12);
    let malformed = results.iter().filter(|r| r["parse"]["status"] == "malformed").count();
    assert_eq!(summary.malformed, malformed);
    assert_eq!(malformed, 2);

    // Every line agrees with scoring it directly.
    for (line, r) in lines.iter().zip(&results) {
        let raw = line.get("raw_output").or_else(|| line.get("target")).unwrap().as_str().unwrap();
        let gt = engine.resolve(&serde_json::from_value(line["ground_truth"].clone()).unwrap()).unwrap();
        let expected = engine.score(raw, &gt).unwrap().total;
        assert_eq!(r["total"].as_f64().unwrap(), expected, "{}", r["id"]);
    }
    assert_eq!(results[0]["total"], 2.0);
    assert_eq!(results[3]["total"], 4.0);
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_lines(&dir, "in.jsonl", &[]);
    let output = dir.path().join("out.jsonl");
    let summary = score_file(&input, &output, &RewardEngine::default()).unwrap();
    assert_eq!(summary.lines, 0);
    assert_eq!(summary.mean_total, 0.0);
    assert_eq!(std::fs::read_to_string(&output).unwrap(), "");
}

#[test]
fn unreadable_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = score_file(&dir.path().join("missing.jsonl"), &dir.path().join("o"), &RewardEngine::default())
        .unwrap_err();
    assert!(matches!(err, ScoreFileError::Read { .. }), "{err}");
}

#[test]
fn bad_line_is_reported_by_number() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = fixture();
    lines[4] = json!({"id": "r4", "raw_output": "x", "ground_truth": {"label": "normal", "type": "hole"}});
    let input = write_lines(&dir, "in.jsonl", &lines);
    let output = dir.path().join("out.jsonl");
    match score_file(&input, &output, &RewardEngine::default()) {
        Err(ScoreFileError::Line { line, .. }) => assert_eq!(line, 5),
        other => panic!("unexpected {other:?}"),
    }
    assert!(!output.exists(), "no partial output on failure");
}
