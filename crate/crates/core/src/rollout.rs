//! Solver-portfolio rollout and the bounded tool-calling agent loop.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::archetype::Ingredients;
use crate::dataset::ProblemInstance;
use crate::evaluation::{answers_match, MatchTolerance};
use crate::prompts::{self, PromptError};
use crate::providers::{ChatClient, ChatRequest, ProviderError, ToolSchema, RUN_CODE};
use crate::sandbox::{ExecutionObservation, Executor, SandboxError};
use crate::structured::{ask_with_repair, parse_json_object, reject_extra_keys, RepairError};

pub const DEFAULT_MAX_TURNS: usize = 12;
pub const DEFAULT_TOP_K: usize = 3;

/// Placeholder for the `{skill}` slot when the agent runs without a skill.
pub const NO_SKILL_PLACEHOLDER: &str = "(no skill provided)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RolloutError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("solver selection unparseable after repair: {0}")]
    MalformedSelection(String),
    #[error("top-k {k} exceeds catalog size {catalog}")]
    InvalidK { k: usize, catalog: usize },
    #[error("invalid solver catalog: {0}")]
    InvalidCatalog(String),
    #[error("problem `{0}` has no ground-truth answer")]
    MissingGroundTruth(String),
    #[error("max_turns must be at least 1")]
    InvalidLimits,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverEntry {
    pub solver_id: String,
    pub framework: String,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_path: Option<PathBuf>,
}

impl SolverEntry {
    fn new(solver_id: &str, framework: &str, backend: &str) -> Self {
        SolverEntry { solver_id: solver_id.into(), framework: framework.into(), backend: backend.into(), doc_path: None }
    }
}

/// The candidate solver pool, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SolverCatalog {
    entries: Vec<SolverEntry>,
}

impl SolverCatalog {
    pub fn new(entries: Vec<SolverEntry>) -> Result<Self, RolloutError> {
        if entries.is_empty() {
            return Err(RolloutError::InvalidCatalog("catalog is empty".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.solver_id.trim().is_empty() {
                return Err(RolloutError::InvalidCatalog(format!("entry {i} has an empty solver_id")));
            }
            if entries[..i].iter().any(|p| p.solver_id == e.solver_id) {
                return Err(RolloutError::InvalidCatalog(format!("duplicate solver_id `{}`", e.solver_id)));
            }
        }
        Ok(SolverCatalog { entries })
    }

    /// Python modeling frameworks and backends the executor prompt knows about.
    pub fn builtin() -> Self {
        SolverCatalog::new(vec![
            SolverEntry::new("pyomo_highs", "pyomo", "highs"),
            SolverEntry::new("pyomo_glpk", "pyomo", "glpk"),
            SolverEntry::new("pyomo_ipopt", "pyomo", "ipopt"),
            SolverEntry::new("pyomo_mindtpy", "pyomo", "mindtpy"),
            SolverEntry::new("pyomo_gurobi", "pyomo", "gurobi"),
            SolverEntry::new("ortools_scip", "ortools", "scip"),
            SolverEntry::new("ortools_cbc", "ortools", "cbc"),
            SolverEntry::new("ortools_clp", "ortools", "clp"),
        ])
        .expect("builtin catalog is valid")
    }

    /// Reads a JSON list of entries. Relative `doc_path`s resolve against the
    /// catalog file's directory.
    pub fn from_file(path: &Path) -> Result<Self, RolloutError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RolloutError::InvalidCatalog(format!("cannot read {}: {e}", path.display())))?;
        let mut entries: Vec<SolverEntry> = serde_json::from_str(&text)
            .map_err(|e| RolloutError::InvalidCatalog(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut entries {
            if let Some(doc) = &e.doc_path {
                if doc.is_relative() {
                    e.doc_path = Some(base.join(doc));
                }
            }
        }
        SolverCatalog::new(entries)
    }

    pub fn entries(&self) -> &[SolverEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, solver_id: &str) -> Option<&SolverEntry> {
        self.entries.iter().find(|e| e.solver_id == solver_id)
    }

    /// Identifier-only view shown to the selector; docs are loaded later.
    pub fn prompt_json(&self) -> String {
        let items: Vec<Value> = self
            .entries
            .iter()
            .map(|e| serde_json::json!({"solver_id": e.solver_id, "framework": e.framework, "backend": e.backend}))
            .collect();
        serde_json::to_string_pretty(&items).expect("catalog serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentLimits {
    pub max_turns: usize,
    pub temperature: f64,
    pub max_output_length: u32,
}

impl Default for AgentLimits {
    fn default() -> Self {
        AgentLimits { max_turns: DEFAULT_MAX_TURNS, temperature: 0.0, max_output_length: ChatRequest::DEFAULT_MAX_OUTPUT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub code: String,
    pub observation: ExecutionObservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
    /// Not yet compared against a ground truth.
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answer,
    /// `<answer>` present but not a finite number.
    MalformedAnswer,
    TurnLimit,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem_id: String,
    pub solver_id: Option<String>,
    pub skill_id: Option<String>,
    /// Latest `<formulation>` block, verbatim.
    pub formulation: Option<String>,
    pub steps: Vec<TrajectoryStep>,
    pub candidate_answer: Option<f64>,
    /// Provider calls made by the loop.
    pub turns_used: usize,
    pub label: Label,
    pub termination: Termination,
    pub assistant_turns: Vec<String>,
    pub error: Option<String>,
}

impl Trajectory {
    fn empty(problem_id: &str, solver_id: Option<&str>, skill_id: Option<&str>) -> Self {
        Trajectory {
            problem_id: problem_id.to_string(),
            solver_id: solver_id.map(str::to_string),
            skill_id: skill_id.map(str::to_string),
            formulation: None,
            steps: Vec::new(),
            candidate_answer: None,
            turns_used: 0,
            label: Label::Unresolved,
            termination: Termination::Error,
            assistant_turns: Vec::new(),
            error: None,
        }
    }

    pub fn final_step(&self) -> Option<&TrajectoryStep> {
        self.steps.last()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub positives: Vec<Trajectory>,
    pub negatives: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.positives.iter().chain(&self.negatives)
    }

    pub fn push(&mut self, t: Trajectory) {
        if t.label == Label::Positive {
            self.positives.push(t)
        } else {
            self.negatives.push(t)
        }
    }
}

/// Last `RESULT:` line in `stdout` that parses as a finite real.
pub fn parse_result_line(stdout: &str) -> Option<f64> {
    stdout.lines().rev().find_map(|line| {
        let rest = line.trim_start().strip_prefix("RESULT:")?;
        rest.trim().parse::<f64>().ok().filter(|v| v.is_finite())
    })
}

/// Content of the last complete `<tag>...</tag>` block.
pub fn last_tag<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut found = None;
    let mut pos = 0;
    while let Some(start) = text[pos..].find(&open) {
        let body_start = pos + start + open.len();
        match text[body_start..].find(&close) {
            Some(end) => {
                found = Some(&text[body_start..body_start + end]);
                pos = body_start + end + close.len();
            }
            None => break,
        }
    }
    found
}

fn parse_number(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, PartialEq)]
enum AnswerTag {
    Absent,
    Value(f64),
    Malformed(String),
}

fn answer_tag(text: &str) -> AnswerTag {
    match last_tag(text, "answer") {
        Some(body) => match parse_number(body) {
            Some(v) => AnswerTag::Value(v),
            None => AnswerTag::Malformed(format!("non-numeric <answer> content `{}`", body.trim())),
        },
        None if text.contains("<answer>") => AnswerTag::Malformed("unterminated <answer> tag".into()),
        None => AnswerTag::Absent,
    }
}

/// Script text from `run_code` arguments: the `code` field of a JSON object,
/// or the raw argument string when it is not such an object.
fn tool_code(arguments: &str) -> String {
    match serde_json::from_str::<Value>(arguments) {
        Ok(Value::Object(map)) => match map.get("code") {
            Some(Value::String(s)) => s.clone(),
            _ => String::new(),
        },
        _ => arguments.to_string(),
    }
}

fn render_observation(obs: &ExecutionObservation) -> String {
    let exit = obs.exit_status.map_or_else(|| "killed".to_string(), |c| c.to_string());
    format!(
        "exit_status: {exit}\ntimed_out: {}\nwall_time: {:.3}s\nstdout:\n{}\nstderr:\n{}",
        obs.timed_out, obs.wall_time, obs.stdout, obs.stderr
    )
}

/// Skill injected into the executor system prompt.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSkill<'a> {
    pub skill_id: &'a str,
    pub document: &'a str,
}

/// One agent-loop episode.
#[derive(Debug, Clone, Copy)]
pub struct Episode<'a> {
    pub problem_id: &'a str,
    pub problem_text: &'a str,
    pub keywords: &'a Ingredients,
    pub skill: Option<EpisodeSkill<'a>>,
    pub solver: Option<&'a SolverEntry>,
}

fn system_prompt(ep: &Episode<'_>) -> Result<String, RolloutError> {
    let skill = ep.skill.map_or(NO_SKILL_PLACEHOLDER, |s| s.document);
    let mut text = prompts::EXECUTOR_SYSTEM.fill(&[("keywords", ep.keywords.to_prompt_json()), ("skill", skill.to_string())])?;
    if let Some(solver) = ep.solver {
        text.push_str(&format!(
            "\n\n### Solver Configuration\n<solver>\nsolver_id: {}\nframework: {}\nbackend: {}\n</solver>\n",
            solver.solver_id, solver.framework, solver.backend
        ));
        if let Some(path) = &solver.doc_path {
            let docs = std::fs::read_to_string(path)
                .map_err(|e| RolloutError::InvalidCatalog(format!("cannot read solver docs {}: {e}", path.display())))?;
            text.push_str(&format!("\n### Solver Documentation\n{docs}\n"));
        }
    }
    Ok(text)
}

/// Runs the loop, returning the (possibly partial) trajectory together with
/// the error that stopped it, if any.
fn drive_loop(
    chat: &ChatClient,
    executor: &dyn Executor,
    ep: &Episode<'_>,
    limits: &AgentLimits,
) -> (Trajectory, Option<RolloutError>) {
    let mut traj = Trajectory::empty(ep.problem_id, ep.solver.map(|s| s.solver_id.as_str()), ep.skill.map(|s| s.skill_id));
    if limits.max_turns == 0 {
        return (traj, Some(RolloutError::InvalidLimits));
    }
    let prompts = system_prompt(ep).and_then(|sys| {
        let user = prompts::EXECUTOR_USER.fill(&[("problem_description", ep.problem_text.to_string())])?;
        Ok((sys, user))
    });
    let (system, user) = match prompts {
        Ok(p) => p,
        Err(e) => return (traj, Some(e)),
    };

    let mut transcript = String::new();
    let mut tmp: Option<f64> = None;
    for turn in 1..=limits.max_turns {
        let user_text = if transcript.is_empty() {
            user.clone()
        } else {
            format!("{user}\n\n### Conversation so far\n{transcript}\nContinue from the last observation.")
        };
        let request = ChatRequest::new(system.clone(), user_text)
            .with_temperature(limits.temperature)
            .with_tools(vec![ToolSchema::run_code()]);
        let request = ChatRequest { max_output_length: limits.max_output_length, ..request };
        let response = match chat.chat_complete(&request) {
            Ok(r) => r,
            Err(e) => return (traj, Some(e.into())),
        };
        traj.turns_used = turn;
        traj.assistant_turns.push(response.text.clone());
        transcript.push_str(&format!("<assistant turn=\"{turn}\">\n{}\n</assistant>\n", response.text));

        if let Some(f) = last_tag(&response.text, "formulation") {
            traj.formulation = Some(f.trim().to_string());
        }
        if let Some(v) = last_tag(&response.text, "tmp").and_then(parse_number) {
            tmp = Some(v);
        }
        match answer_tag(&response.text) {
            AnswerTag::Value(v) => {
                traj.candidate_answer = Some(v);
                traj.termination = Termination::Answer;
                return (traj, None);
            }
            AnswerTag::Malformed(msg) => {
                traj.termination = Termination::MalformedAnswer;
                traj.error = Some(msg);
                return (traj, None);
            }
            AnswerTag::Absent => {}
        }

        let Some(call) = response.tool_call else { continue };
        if call.name != RUN_CODE {
            transcript.push_str(&format!("<tool_error>unknown tool `{}`; only `{RUN_CODE}` exists</tool_error>\n", call.name));
            continue;
        }
        let code = tool_code(&call.arguments);
        if code.trim().is_empty() {
            transcript.push_str("<tool_error>run_code called without code</tool_error>\n");
            continue;
        }
        match executor.execute(&code) {
            Ok(observation) => {
                transcript.push_str(&format!(
                    "<tool_call name=\"{RUN_CODE}\">\n{code}\n</tool_call>\n<observation>\n{}\n</observation>\n",
                    render_observation(&observation)
                ));
                traj.steps.push(TrajectoryStep { code, observation });
            }
            Err(e) => return (traj, Some(e.into())),
        }
    }
    traj.termination = Termination::TurnLimit;
    traj.candidate_answer = tmp;
    (traj, None)
}

/// Drives one episode to `<answer>` or turn exhaustion. The returned
/// trajectory is unlabeled.
pub fn run_agent_loop(
    chat: &ChatClient,
    executor: &dyn Executor,
    episode: &Episode<'_>,
    limits: &AgentLimits,
) -> Result<Trajectory, RolloutError> {
    match drive_loop(chat, executor, episode, limits) {
        (traj, None) => Ok(traj),
        (_, Some(e)) => Err(e),
    }
}

pub fn label_trajectory(mut traj: Trajectory, ground_truth: f64, tolerance: MatchTolerance) -> Trajectory {
    let positive = traj.candidate_answer.is_some_and(|c| answers_match(c, ground_truth, tolerance).unwrap_or(false));
    traj.label = if positive { Label::Positive } else { Label::Negative };
    traj
}

fn parse_selection(text: &str) -> Result<Vec<String>, String> {
    let map = parse_json_object(text)?;
    reject_extra_keys(&map, &["selected"])?;
    let Some(Value::Array(items)) = map.get("selected") else {
        return Err("`selected` must be a list".into());
    };
    items
        .iter()
        .map(|item| match item {
            Value::String(s) => Ok(s.clone()),
            Value::Object(o) => match o.get("solver_id") {
                Some(Value::String(s)) => Ok(s.clone()),
                _ => Err("each selected entry needs a string `solver_id`".to_string()),
            },
            _ => Err("entries of `selected` must be objects".to_string()),
        })
        .collect()
}

/// Top-k distinct catalog ids: the selector's valid picks in response
/// order, padded from the catalog in declaration order.
pub fn select_solvers(
    chat: &ChatClient,
    problem_text: &str,
    keywords: &Ingredients,
    catalog: &SolverCatalog,
    k: usize,
    temperature: f64,
) -> Result<Vec<String>, RolloutError> {
    if k == 0 || k > catalog.len() {
        return Err(RolloutError::InvalidK { k, catalog: catalog.len() });
    }
    let prompt = prompts::SOLVER_SELECTION.fill(&[
        ("problem_description", problem_text.to_string()),
        ("keywords", keywords.to_prompt_json()),
        ("top_k", k.to_string()),
        ("solver_catalog", catalog.prompt_json()),
    ])?;
    let request = ChatRequest::new("", prompt).with_temperature(temperature);
    let picked = ask_with_repair(chat, &request, parse_selection).map_err(|e| match e {
        RepairError::Provider(p) => RolloutError::Provider(p),
        RepairError::Invalid(m) => RolloutError::MalformedSelection(m),
    })?;
    let mut chosen: Vec<String> = Vec::with_capacity(k);
    for id in picked {
        if chosen.len() == k {
            break;
        }
        if catalog.get(&id).is_none() {
            log::warn!("selector returned unknown solver id `{id}`; dropped");
        } else if !chosen.contains(&id) {
            chosen.push(id);
        }
    }
    for entry in catalog.entries() {
        if chosen.len() == k {
            break;
        }
        if !chosen.contains(&entry.solver_id) {
            chosen.push(entry.solver_id.clone());
        }
    }
    Ok(chosen)
}

/// Everything a portfolio rollout needs besides the problem.
#[derive(Clone, Copy)]
pub struct RolloutContext<'a> {
    pub selector: &'a ChatClient,
    pub agent: &'a ChatClient,
    pub executor: &'a dyn Executor,
    pub catalog: &'a SolverCatalog,
    pub top_k: usize,
    pub limits: AgentLimits,
    pub tolerance: MatchTolerance,
    /// Concurrent agent loops; 1 keeps provider call order deterministic.
    pub max_parallel: usize,
}

/// Selects solvers, runs one skill-free episode per solver, labels each
/// trajectory. Episode failures become negative trajectories carrying the
/// error; they never abort sibling episodes.
pub fn rollout_portfolio(
    ctx: &RolloutContext<'_>,
    problem: &ProblemInstance,
    keywords: &Ingredients,
) -> Result<TrajectorySet, RolloutError> {
    let truth = problem.answer.ok_or_else(|| RolloutError::MissingGroundTruth(problem.id.clone()))?;
    let solver_ids = select_solvers(ctx.selector, &problem.problem, keywords, ctx.catalog, ctx.top_k, ctx.limits.temperature)?;
    let run_one = |solver_id: &String| -> Trajectory {
        let episode = Episode {
            problem_id: &problem.id,
            problem_text: &problem.problem,
            keywords,
            skill: None,
            solver: ctx.catalog.get(solver_id),
        };
        let (mut traj, err) = drive_loop(ctx.agent, ctx.executor, &episode, &ctx.limits);
        if let Some(e) = err {
            log::warn!("rollout of `{}` with `{solver_id}` failed: {e}", problem.id);
            traj.termination = Termination::Error;
            traj.error = Some(e.to_string());
            traj.candidate_answer = None;
            traj.label = Label::Negative;
            return traj;
        }
        label_trajectory(traj, truth, ctx.tolerance)
    };

    let trajectories: Vec<Trajectory> = if ctx.max_parallel <= 1 {
        solver_ids.iter().map(run_one).collect()
    } else {
        let mut out = Vec::with_capacity(solver_ids.len());
        for chunk in solver_ids.chunks(ctx.max_parallel) {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|id| s.spawn(|| run_one(id))).collect();
                out.extend(handles.into_iter().map(|h| h.join().expect("rollout thread panicked")));
            });
        }
        out
    };
    let mut set = TrajectorySet::default();
    for t in trajectories {
        set.push(t);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::{MockRecord, ScriptedChat};
    use crate::providers::CallBudget;
    use crate::sandbox::ScriptedExecutor;
    use std::sync::Arc;

    fn chat(records: Vec<MockRecord>) -> (ChatClient, Arc<ScriptedChat>) {
        let backend = Arc::new(ScriptedChat::new("t", records));
        (ChatClient::new(backend.clone(), CallBudget::unlimited()), backend)
    }

    fn kw() -> Ingredients {
        Ingredients::new(&["x"], &["cap"], &["min_cost"])
    }

    fn episode<'a>(k: &'a Ingredients) -> Episode<'a> {
        Episode { problem_id: "p1", problem_text: "Minimize cost.", keywords: k, skill: None, solver: None }
    }

    #[test]
    fn result_line_examples() {
        assert_eq!(parse_result_line("RESULT: 42.5"), Some(42.5));
        assert_eq!(parse_result_line("RESULT:-3\nRESULT: 8"), Some(8.0));
        assert_eq!(parse_result_line("no result here"), None);
        assert_eq!(parse_result_line("RESULT: 1\nRESULT: nan-ish"), Some(1.0));
        assert_eq!(parse_result_line("  RESULT:\t1e3  "), Some(1000.0));
        assert_eq!(parse_result_line("RESULT: inf"), None);
    }

    #[test]
    fn tags() {
        assert_eq!(last_tag("<tmp>1</tmp> x <tmp>2</tmp>", "tmp"), Some("2"));
        assert_eq!(last_tag("<tmp>1</tmp> <tmp>2", "tmp"), Some("1"));
        assert_eq!(answer_tag("<answer> 42 </answer>"), AnswerTag::Value(42.0));
        assert!(matches!(answer_tag("<answer>about 3</answer>"), AnswerTag::Malformed(_)));
        assert!(matches!(answer_tag("<answer>3"), AnswerTag::Malformed(_)));
        assert_eq!(tool_code(r#"{"code":"print(1)"}"#), "print(1)");
        assert_eq!(tool_code("print(1)"), "print(1)");
    }

    #[test]
    fn two_turn_episode() {
        let (c, backend) = chat(vec![
            MockRecord::run_code("<formulation>{\"obj\":\"min\"}</formulation>", "print('RESULT: 7')"),
            MockRecord::text("<tmp>7</tmp>\n<answer>7</answer>"),
        ]);
        let exec = ScriptedExecutor::new(vec![ExecutionObservation::from_stdout("RESULT: 7")]);
        let k = kw();
        let t = run_agent_loop(&c, &exec, &episode(&k), &AgentLimits::default()).unwrap();
        assert_eq!(t.candidate_answer, Some(7.0));
        assert_eq!(t.turns_used, 2);
        assert_eq!(t.steps.len(), 1);
        assert_eq!(t.formulation.as_deref(), Some("{\"obj\":\"min\"}"));
        assert_eq!(t.termination, Termination::Answer);
        let reqs = backend.requests();
        assert!(reqs[0].system_text.contains(NO_SKILL_PLACEHOLDER));
        assert!(reqs[1].user_text.contains("RESULT: 7"));
        assert_eq!(exec.received(), vec!["print('RESULT: 7')".to_string()]);
    }

    #[test]
    fn exhaustion_falls_back_to_tmp() {
        let mut records: Vec<MockRecord> = (0..11).map(|i| MockRecord::text(format!("<tmp>{i}</tmp>"))).collect();
        records.push(MockRecord::text("<tmp>3.5</tmp>"));
        let (c, _) = chat(records);
        let exec = ScriptedExecutor::new(vec![]);
        let k = kw();
        let t = run_agent_loop(&c, &exec, &episode(&k), &AgentLimits::default()).unwrap();
        assert_eq!(t.turns_used, 12);
        assert_eq!(t.candidate_answer, Some(3.5));
        assert_eq!(t.termination, Termination::TurnLimit);
    }

    #[test]
    fn immediate_answer() {
        let (c, _) = chat(vec![MockRecord::text("<answer>42</answer>")]);
        let exec = ScriptedExecutor::new(vec![]);
        let k = kw();
        let t = run_agent_loop(&c, &exec, &episode(&k), &AgentLimits::default()).unwrap();
        assert_eq!((t.turns_used, t.steps.len(), t.candidate_answer), (1, 0, Some(42.0)));
    }

    #[test]
    fn answer_wins_over_tool_call_and_malformed_answer_is_unresolved() {
        let (c, _) = chat(vec![MockRecord::run_code("<answer>5</answer>", "print(1)")]);
        let exec = ScriptedExecutor::new(vec![]);
        let k = kw();
        let t = run_agent_loop(&c, &exec, &episode(&k), &AgentLimits::default()).unwrap();
        assert_eq!(t.candidate_answer, Some(5.0));
        assert!(exec.received().is_empty());

        let (c, _) = chat(vec![MockRecord::text("<tmp>4</tmp><answer>four</answer>")]);
        let t = run_agent_loop(&c, &exec, &episode(&k), &AgentLimits::default()).unwrap();
        assert_eq!(t.termination, Termination::MalformedAnswer);
        assert_eq!(t.candidate_answer, None);
        assert_eq!(label_trajectory(t, 4.0, MatchTolerance::default()).label, Label::Negative);
    }

    #[test]
    fn labeling() {
        let mut t = Trajectory::empty("p", None, None);
        t.candidate_answer = Some(100.005);
        assert_eq!(label_trajectory(t.clone(), 100.0, MatchTolerance::default()).label, Label::Positive);
        t.candidate_answer = None;
        assert_eq!(label_trajectory(t, 100.0, MatchTolerance::default()).label, Label::Negative);
    }

    #[test]
    fn selection_drops_unknown_and_pads() {
        let catalog = SolverCatalog::builtin();
        let (c, _) = chat(vec![MockRecord::text(
            r#"{"selected":[{"solver_id":"pyomo_highs","reason":"lp"},{"solver_id":"made_up_solver","reason":"?"}]}"#,
        )]);
        assert_eq!(select_solvers(&c, "p", &kw(), &catalog, 2, 0.0).unwrap(), vec!["pyomo_highs", "pyomo_glpk"]);

        let (c, _) = chat(vec![MockRecord::text(r#"{"selected":[]}"#)]);
        let all: Vec<String> = catalog.entries().iter().map(|e| e.solver_id.clone()).collect();
        assert_eq!(select_solvers(&c, "p", &kw(), &catalog, 8, 0.0).unwrap(), all);

        let (c, _) = chat(vec![MockRecord::text(
            r#"{"selected":[{"solver_id":"ortools_cbc"},{"solver_id":"ortools_cbc"},{"solver_id":"pyomo_ipopt"},{"solver_id":"ortools_scip"}]}"#,
        )]);
        assert_eq!(select_solvers(&c, "p", &kw(), &catalog, 3, 0.0).unwrap(), vec!["ortools_cbc", "pyomo_ipopt", "ortools_scip"]);
    }

    #[test]
    fn selection_errors() {
        let catalog = SolverCatalog::builtin();
        let (c, _) = chat(vec![]);
        assert_eq!(select_solvers(&c, "p", &kw(), &catalog, 9, 0.0), Err(RolloutError::InvalidK { k: 9, catalog: 8 }));
        let (c, _) = chat(vec![MockRecord::text("nope"), MockRecord::text("{\"chosen\":[]}")]);
        assert!(matches!(select_solvers(&c, "p", &kw(), &catalog, 3, 0.0), Err(RolloutError::MalformedSelection(_))));
    }

    #[test]
    fn catalog_validation() {
        let e = SolverEntry::new("a", "f", "b");
        assert!(SolverCatalog::new(vec![]).is_err());
        assert!(SolverCatalog::new(vec![e.clone(), e]).is_err());
    }

    #[test]
    fn portfolio_partitions_and_captures_errors() {
        let sel = r#"{"selected":["pyomo_highs","ortools_cbc","ortools_scip"]}"#;
        let (selector, _) = chat(vec![MockRecord::text(sel)]);
        let (agent, _) = chat(vec![
            MockRecord::text("<answer>10</answer>"),
            MockRecord::text("<answer>11</answer>"),
            MockRecord::run_code("<formulation>{}</formulation>", "crash()"),
        ]);
        // The third episode's tool call finds no scripted observation.
        let exec = ScriptedExecutor::new(vec![]);
        let catalog = SolverCatalog::builtin();
        let ctx = RolloutContext {
            selector: &selector,
            agent: &agent,
            executor: &exec,
            catalog: &catalog,
            top_k: 3,
            limits: AgentLimits::default(),
            tolerance: MatchTolerance::default(),
            max_parallel: 1,
        };
        let problem = ProblemInstance::new("p1", "Minimize.", Some(10.0));
        let set = rollout_portfolio(&ctx, &problem, &kw()).unwrap();
        assert_eq!((set.positives.len(), set.negatives.len()), (1, 2));
        assert_eq!(set.positives[0].solver_id.as_deref(), Some("pyomo_highs"));
        let crashed = &set.negatives[1];
        assert_eq!(crashed.termination, Termination::Error);
        assert!(crashed.error.is_some());
        assert_eq!(crashed.formulation.as_deref(), Some("{}"));
    }

    #[test]
    fn solver_identity_in_system_prompt() {
        let k = kw();
        let catalog = SolverCatalog::builtin();
        let ep = Episode { solver: catalog.get("ortools_scip"), ..episode(&k) };
        let sys = system_prompt(&ep).unwrap();
        assert!(sys.contains("solver_id: ortools_scip"));
        assert!(sys.contains("\"min_cost\""));
    }
}
