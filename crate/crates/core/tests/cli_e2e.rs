mod common;

use std::fs;

use common::*;
use optskills::pipeline::{EvalRecord, LearnReport};
use optskills::skills::{load_library, LearnPath};

#[test]
fn discover_learn_eval_with_mock_providers() {
    let dir = tempfile::tempdir().unwrap();
    let out = full_run(dir.path());
    assert!(out.contains("alpha"), "{out}");
    assert!(out.contains("beta"), "{out}");

    let lib = load_library(&dir.path().join("library")).unwrap();
    assert_eq!(lib.len(), 2);
    // discover inserts one skill; learn refines it three times and expands once
    assert_eq!(lib.version(), 5);
    let refined: Vec<_> = lib.iter().filter(|s| s.revision == 4).collect();
    assert_eq!(refined.len(), 1);
    assert_eq!(refined[0].name, "binary_knapsack_selection");
    assert!(refined[0].document.contains("(pass 3)"));

    let runs: Vec<_> = fs::read_dir(dir.path().join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 3);
    let learn_dir = runs.iter().find(|p| p.to_str().unwrap().ends_with("-learn")).unwrap();
    let report: LearnReport = serde_json::from_str(&fs::read_to_string(learn_dir.join("report.json")).unwrap()).unwrap();
    let paths: Vec<_> = report.updates.iter().map(|u| u.path).collect();
    assert_eq!(paths, [LearnPath::Reuse, LearnPath::Expand, LearnPath::Reuse, LearnPath::Reuse]);
    assert!(report.updates.iter().all(|u| u.errors.is_empty()));

    let eval_dir = runs.iter().find(|p| p.to_str().unwrap().ends_with("-eval")).unwrap();
    let results = fs::read_to_string(eval_dir.join("results.jsonl")).unwrap();
    let records: Vec<EvalRecord> = results.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let correct: Vec<_> = records.iter().map(|r| r.correct).collect();
    assert_eq!(correct, [Some(true), Some(false), Some(true), Some(true)]);

    let rescored = cli_ok(&["eval", "--results", eval_dir.join("results.jsonl").to_str().unwrap()]);
    assert_eq!(rescored, out);
}

#[test]
fn eval_refuses_an_empty_library() {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path());
    let eval = write_eval(dir.path(), "000000000000");
    let out = cli(&["eval", "--config", eval.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn snapshot_copies_the_current_version() {
    let dir = tempfile::tempdir().unwrap();
    let discover = write_workspace(dir.path());
    cli_ok(&["discover", "--config", discover.to_str().unwrap()]);
    let lib_dir = dir.path().join("library");
    let printed = cli_ok(&["snapshot", "--library", lib_dir.to_str().unwrap()]);
    let snap = lib_dir.join("snapshots").join("v1");
    assert_eq!(printed.trim(), snap.display().to_string());
    let a = load_library(&lib_dir).unwrap();
    let b = load_library(&snap).unwrap();
    assert_eq!(a.iter().collect::<Vec<_>>(), b.iter().collect::<Vec<_>>());
    assert!(!cli(&["snapshot", "--library", lib_dir.to_str().unwrap()]).status.success());
}

#[test]
fn cluster_and_metrics_commands() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [
        ("a", [1.0, 0.0, 0.0], "x"),
        ("b", [0.99, 0.05, 0.0], "x"),
        ("c", [0.0, 1.0, 0.0], "y"),
        ("d", [0.0, 0.98, 0.1], "y"),
        ("e", [0.0, 0.0, 1.0], "z"),
    ];
    let text: String = rows
        .iter()
        .map(|(id, v, l)| serde_json::json!({"id": id, "vector": v, "label": l}).to_string() + "\n")
        .collect();
    let path = dir.path().join("emb.jsonl");
    fs::write(&path, text).unwrap();

    let out = cli_ok(&["cluster", "--embeddings", path.to_str().unwrap(), "--epsilon", "0.05", "--epsilon", "1.5"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], "0.05\t1\t3\t0\t1.0000\t1.0000");
    assert!(lines[2].starts_with("1.5\t1\t1\t0\t"));

    let out = cli_ok(&["metrics", "--embeddings", path.to_str().unwrap(), "--k", "1"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["query_count"], 4);
    assert_eq!(report["skipped_queries"], 1);
    assert_eq!(report["mrr"], 1.0);
}
