//! Programmatic fixtures for end-to-end runs against mock providers and a
//! scripted executor. Every role gets its own scenario file, so each file
//! lists that role's responses in call order.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use optskills::providers::mock::{write_scenario, MockRecord};
use serde_json::json;

pub const TIMESTAMP: &str = "2026-03-01T09:30:00Z";

pub fn skill_doc(name: &str, description: &str, pitfall: &str) -> String {
    format!(
        "---\nname: {name}\ndescription: {description}\n---\n\n# Workflow 1: pulp_cbc\n\n\
## Modeling stage\n\n### Strategy Overview\nOne binary per item, one capacity row.\n\n\
### Formulation Template\nmax sum v_i x_i s.t. sum w_i x_i <= C, x binary.\n\n\
### Common Pitfalls\n- {pitfall}\n\n\
## Solving stage\n\n### Strategy Overview\nBuild with PuLP and solve with CBC.\n\n\
### Code Usage\n```python\nprob.solve(pulp.PULP_CBC_CMD(msg=False))\nprint(f\"RESULT: {{pulp.value(prob.objective)}}\")\n```\n\n\
### Common Pitfalls\n- Reading the objective before checking the status.\n"
    )
}

fn extraction(edited: &str) -> MockRecord {
    MockRecord::text(
        json!({
            "keywords": {
                "variable": ["binary selection"],
                "constraint": ["capacity"],
                "objective": ["maximize value"]
            },
            "edited_problem": edited,
            "confidence": 0.9
        })
        .to_string(),
    )
}

fn selection(ids: &[&str]) -> MockRecord {
    let picked: Vec<_> = ids.iter().map(|id| json!({"solver_id": id, "reason": "fits"})).collect();
    MockRecord::text(json!({ "selected": picked }).to_string())
}

/// Two agent turns: one `run_code`, then an answer.
fn episode(answer: f64) -> [MockRecord; 2] {
    [
        MockRecord::run_code("<formulation>max v.x s.t. w.x <= C</formulation>", "print('RESULT: 42')"),
        MockRecord::text(format!("<answer>{answer}</answer>")),
    ]
}

fn analysis(positive: bool) -> MockRecord {
    let (sop, avoid) = if positive {
        ("Model items as binaries and print the objective.", "")
    } else {
        ("", "Do not round the fractional relaxation.")
    };
    MockRecord::text(json!({"positive_sop": sop, "should_avoid": avoid}).to_string())
}

fn decision(mode_word: &str, skill_id: &str) -> MockRecord {
    MockRecord::text(json!({"decision": mode_word, "skill_id": skill_id, "reason": "same archetype", "confidence": 0.8}).to_string())
}

fn observations(n: usize) -> String {
    let obs: Vec<_> = (0..n).map(|_| json!({"stdout": "RESULT: 42\n"})).collect();
    serde_json::to_string_pretty(&obs).unwrap()
}

fn dataset_line(id: &str, answer: f64, benchmark: &str) -> String {
    json!({
        "id": id,
        "problem": format!("Problem {id}: choose items under a weight capacity to maximize total value."),
        "answer": answer,
        "benchmark": benchmark
    })
    .to_string()
}

fn write_config(dir: &Path, name: &str, scenario_dir: &str, roles: &[&str]) -> PathBuf {
    let mut text = format!(
        "top_k = 2\nmax_turns = 4\nfixed_timestamp = \"{TIMESTAMP}\"\n\n\
[paths]\ndataset = \"train.jsonl\"\neval_dataset = \"test.jsonl\"\nlibrary = \"library\"\nruns = \"runs\"\n\n\
[executor]\nkind = \"scripted\"\nscenario = \"{scenario_dir}/sandbox.json\"\n"
    );
    // Roles not listed fall back to an empty scenario: any call to them fails.
    fs::write(dir.join(scenario_dir).join("default.json"), "[]\n").unwrap();
    text.push_str(&format!("\n[providers.default]\nkind = \"mock\"\nscenario = \"{scenario_dir}/default.json\"\n"));
    for role in roles {
        text.push_str(&format!("\n[providers.{role}]\nkind = \"mock\"\nscenario = \"{scenario_dir}/{role}.json\"\n"));
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn scenario(dir: &Path, role: &str, records: &[MockRecord]) {
    write_scenario(&dir.join(format!("{role}.json")), records).unwrap();
}

/// One eval problem: ground truth, the scripted agent's answer, benchmark.
pub struct EvalCase {
    pub truth: f64,
    pub answered: f64,
    pub benchmark: &'static str,
}

pub const TRAIN_PROBLEMS: usize = 8;

/// Four eval cases; three answers match (the last within relative
/// tolerance). Predicted Pass@1: micro 3/4, macro mean(2/3, 1/1).
pub const EVAL_CASES: [EvalCase; 4] = [
    EvalCase { truth: 42.0, answered: 42.0, benchmark: "alpha" },
    EvalCase { truth: 7.0, answered: 42.0, benchmark: "alpha" },
    EvalCase { truth: 3.5, answered: 3.5, benchmark: "alpha" },
    EvalCase { truth: 100.0, answered: 100.00001, benchmark: "beta" },
];
pub const PREDICTED_MICRO: f64 = 0.75;
pub const PREDICTED_MACRO: f64 = (2.0 / 3.0 + 1.0) / 2.0;

const EDITED: &str = "Select items under capacity.";

/// Datasets, discover scenarios and the discover config. Every training
/// problem shares one archetype and the answer 42, so the shuffled split
/// order does not matter to the scripted responses. Discover sees the
/// first half of the training problems.
pub fn write_workspace(dir: &Path) -> PathBuf {
    let train: Vec<String> = (1..=TRAIN_PROBLEMS).map(|i| dataset_line(&format!("t{i}"), 42.0, "train")).collect();
    fs::write(dir.join("train.jsonl"), train.join("\n") + "\n").unwrap();
    let test: Vec<String> =
        EVAL_CASES.iter().enumerate().map(|(i, c)| dataset_line(&format!("e{}", i + 1), c.truth, c.benchmark)).collect();
    fs::write(dir.join("test.jsonl"), test.join("\n") + "\n").unwrap();

    let n = TRAIN_PROBLEMS / 2;
    let d = dir.join("discover");
    fs::create_dir_all(&d).unwrap();
    scenario(&d, "extractor", &vec![extraction(EDITED); n]);
    scenario(&d, "solver_selector", &vec![selection(&["pyomo_highs", "ortools_cbc"]); n]);
    let agent: Vec<MockRecord> = (0..n).flat_map(|_| [42.0, 41.0]).flat_map(episode).collect();
    scenario(&d, "executor", &agent);
    let analyses: Vec<MockRecord> = (0..n).flat_map(|_| [analysis(true), analysis(false)]).collect();
    scenario(&d, "analyst", &analyses);
    let doc = skill_doc("binary_knapsack_selection", "Choose items under one capacity.", "Forgetting integrality.");
    scenario(&d, "builder", &[MockRecord::text(doc)]);
    fs::write(d.join("sandbox.json"), observations(2 * n)).unwrap();
    write_config(dir, "discover.toml", "discover", &["extractor", "solver_selector", "executor", "analyst", "builder"])
}

/// Learn scenarios over the second half of the training problems: the
/// second problem is rejected at recall and expands the library, every
/// other one reuses and refines `skill_id`.
pub fn write_learn(dir: &Path, skill_id: &str) -> PathBuf {
    let n = TRAIN_PROBLEMS - TRAIN_PROBLEMS / 2;
    let d = dir.join("learn");
    fs::create_dir_all(&d).unwrap();
    scenario(&d, "extractor", &vec![extraction(EDITED); n]);
    let (mut selector, mut agent, mut analyses, mut refiner, mut sandbox) = (vec![], vec![], vec![], vec![], 0);
    for i in 0..n {
        if i == 1 {
            selector.push(decision("reject", ""));
            agent.extend([42.0, 41.0].into_iter().flat_map(episode));
            analyses.extend([analysis(true), analysis(false)]);
            sandbox += 2;
        } else {
            selector.extend([decision("recall", skill_id), decision("reuse", skill_id)]);
            agent.extend(episode(42.0));
            analyses.push(analysis(true));
            let pitfall = format!("Forgetting integrality; check status first (pass {i}).");
            refiner.push(MockRecord::text(skill_doc("binary_knapsack_selection", "Choose items under one capacity.", &pitfall)));
            sandbox += 1;
        }
    }
    scenario(&d, "skill_selector", &selector);
    scenario(&d, "executor", &agent);
    scenario(&d, "solver_selector", &[selection(&["pyomo_gurobi", "ortools_cbc"])]);
    scenario(&d, "analyst", &analyses);
    scenario(&d, "refiner", &refiner);
    let new = skill_doc("capacity_selection_with_gurobi", "Capacity selection solved with Gurobi.", "Using continuous variables.");
    scenario(&d, "builder", &[MockRecord::text(new)]);
    fs::write(d.join("sandbox.json"), observations(sandbox)).unwrap();
    write_config(dir, "learn.toml", "learn", &["extractor", "skill_selector", "executor", "solver_selector", "analyst", "refiner", "builder"])
}

pub fn write_eval(dir: &Path, skill_id: &str) -> PathBuf {
    let d = dir.join("eval");
    fs::create_dir_all(&d).unwrap();
    let n = EVAL_CASES.len();
    scenario(&d, "extractor", &vec![extraction(EDITED); n]);
    let pick = MockRecord::text(json!({"skill_id": skill_id, "reason": "closest", "confidence": 0.7}).to_string());
    scenario(&d, "skill_selector", &vec![pick; n]);
    let agent: Vec<MockRecord> = EVAL_CASES.iter().flat_map(|c| episode(c.answered)).collect();
    scenario(&d, "executor", &agent);
    fs::write(d.join("sandbox.json"), observations(n)).unwrap();
    write_config(dir, "eval.toml", "eval", &["extractor", "skill_selector", "executor"])
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optskills")).args(args).env("RUST_LOG", "error").output().unwrap()
}

pub fn cli_ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(out.status.success(), "optskills {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

pub fn first_skill_id(library: &Path) -> String {
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(library.join("index.json")).unwrap()).unwrap();
    let skills = index["skills"].as_array().expect("index lists skills");
    skills[0]["skill_id"].as_str().unwrap().to_string()
}

/// Runs discover, learn and eval in `dir`; returns the eval stdout.
pub fn full_run(dir: &Path) -> String {
    let discover = write_workspace(dir);
    cli_ok(&["discover", "--config", discover.to_str().unwrap()]);
    let skill_id = first_skill_id(&dir.join("library"));
    let learn = write_learn(dir, &skill_id);
    cli_ok(&["learn", "--config", learn.to_str().unwrap()]);
    let eval = write_eval(dir, &skill_id);
    cli_ok(&["eval", "--config", eval.to_str().unwrap()])
}

/// Every file under `root` as (relative path, bytes), sorted by path.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
