//! Skill documents: trajectory analysis, distillation, refinement,
//! selection, online learning and library persistence.

mod learn;
mod library;
pub mod markdown;
mod select;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::archetype::Ingredients;
use crate::prompts::{self, PromptError};
use crate::providers::{ChatClient, ChatRequest, ProviderError};
use crate::rollout::{Label, Trajectory};
use crate::structured::{ask_with_repair, parse_json_object, reject_extra_keys, strip_code_fence, RepairError};

pub use learn::{learn_step, learn_step_with_faults, LearnContext, LearnPath, LearnStage, LibraryUpdate};
pub use library::{load_library, load_or_empty, save_library, SkillLibrary, Snapshot, INDEX_FILE};
pub use markdown::{validate_skill_markdown, SkillDocError, SkillOutline, Stage};
pub use select::{select_skill, Decision, Prefilter, SelectionMode, Selector, SkillDecision};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkillError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("analysis output invalid after repair: {0}")]
    MalformedAnalysis(String),
    #[error("invalid skill document: {}", markdown::describe_errors(.0))]
    InvalidSkillDocument(Vec<SkillDocError>),
    #[error("refinement renamed skill `{expected}` to `{found}`")]
    NameChanged { expected: String, found: String },
    #[error("selection output invalid after repair: {0}")]
    MalformedDecision(String),
    #[error("selector chose unknown skill id `{0}`")]
    UnknownSkillId(String),
    #[error("skill library is empty")]
    EmptyLibrary,
    #[error("no trajectory analyses to distill")]
    NoAnalyses,
    #[error("skill `{0}` already exists")]
    DuplicateSkill(String),
    #[error("skill `{0}` not in library")]
    MissingSkill(String),
    #[error("corrupt skill library: {0}")]
    CorruptLibrary(String),
    #[error("library i/o error: {0}")]
    Io(String),
    #[error("injected fault at {0:?}")]
    Fault(LearnStage),
}

/// A validated skill document plus library bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub skill_id: String,
    pub name: String,
    pub description: String,
    /// Full markdown, frontmatter included.
    pub document: String,
    /// Ingredients of the problems the skill was built from.
    pub keywords: Ingredients,
    pub cluster_provenance: Option<String>,
    pub revision: u32,
    pub created_at: String,
}

impl Skill {
    pub fn from_document(
        skill_id: impl Into<String>,
        document: impl Into<String>,
        keywords: Ingredients,
        cluster_provenance: Option<String>,
        created_at: impl Into<String>,
    ) -> Result<Self, SkillError> {
        let document = document.into();
        let outline = validate_skill_markdown(&document).map_err(SkillError::InvalidSkillDocument)?;
        Ok(Skill {
            skill_id: skill_id.into(),
            name: outline.name,
            description: outline.description,
            document,
            keywords,
            cluster_provenance,
            revision: 1,
            created_at: created_at.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisLabel {
    Positive,
    Negative,
}

impl AnalysisLabel {
    /// Unresolved trajectories count as negative evidence.
    pub fn of(label: Label) -> Self {
        if label == Label::Positive {
            AnalysisLabel::Positive
        } else {
            AnalysisLabel::Negative
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AnalysisLabel::Positive => "positive",
            AnalysisLabel::Negative => "negative",
        }
    }
}

/// Reusable guidance extracted from one trajectory: a procedure to follow
/// (positive) or behavior to avoid (negative), never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAnalysis {
    pub candidate_id: String,
    pub label: AnalysisLabel,
    pub positive_sop: String,
    pub should_avoid: String,
}

impl TrajectoryAnalysis {
    /// Text passed to the refiner.
    pub fn guidance(&self) -> &str {
        match self.label {
            AnalysisLabel::Positive => &self.positive_sop,
            AnalysisLabel::Negative => &self.should_avoid,
        }
    }
}

/// Identifier of a trajectory inside analysis batches.
pub fn candidate_id(traj: &Trajectory) -> String {
    format!("{}:{}", traj.problem_id, traj.solver_id.as_deref().or(traj.skill_id.as_deref()).unwrap_or("agent"))
}

/// Objective metrics shown to the analyst next to the trajectory.
pub fn indicators(traj: &Trajectory) -> Value {
    json!({
        "label": AnalysisLabel::of(traj.label).as_str(),
        "solver_id": traj.solver_id,
        "turns_used": traj.turns_used,
        "wall_time": traj.steps.iter().map(|s| s.observation.wall_time).sum::<f64>(),
        "exit_status": traj.final_step().and_then(|s| s.observation.exit_status),
    })
}

fn render_trajectory(traj: &Trajectory) -> String {
    let steps: Vec<Value> = traj
        .steps
        .iter()
        .map(|s| {
            json!({
                "code": s.code,
                "stdout": s.observation.stdout,
                "stderr": s.observation.stderr,
                "exit_status": s.observation.exit_status,
                "timed_out": s.observation.timed_out,
                "parsed_result": s.observation.parsed_result,
            })
        })
        .collect();
    serde_json::to_string_pretty(&json!({
        "formulation": traj.formulation,
        "assistant_turns": traj.assistant_turns,
        "steps": steps,
        "candidate_answer": traj.candidate_answer,
        "termination": traj.termination,
        "error": traj.error,
    }))
    .expect("trajectory renders")
}

fn parse_analysis(text: &str, label: AnalysisLabel) -> Result<(String, String), String> {
    let map = parse_json_object(text)?;
    reject_extra_keys(&map, &["positive_sop", "should_avoid"])?;
    let field = |k: &str| match map.get(k) {
        Some(Value::String(s)) => Ok(s.trim().to_string()),
        _ => Err(format!("`{k}` must be a string")),
    };
    let (sop, avoid) = (field("positive_sop")?, field("should_avoid")?);
    match label {
        AnalysisLabel::Positive if sop.is_empty() => Err("label is positive but `positive_sop` is empty".into()),
        AnalysisLabel::Positive if !avoid.is_empty() => Err("label is positive but `should_avoid` is not empty".into()),
        AnalysisLabel::Negative if avoid.is_empty() => Err("label is negative but `should_avoid` is empty".into()),
        AnalysisLabel::Negative if !sop.is_empty() => Err("label is negative but `positive_sop` is not empty".into()),
        _ => Ok((sop, avoid)),
    }
}

/// One analyst call for one trajectory.
pub fn analyze_trajectory(
    chat: &ChatClient,
    traj: &Trajectory,
    keywords: &Ingredients,
    temperature: f64,
) -> Result<TrajectoryAnalysis, SkillError> {
    let label = AnalysisLabel::of(traj.label);
    let prompt = prompts::SKILL_ANALYSIS.fill(&[
        ("keywords", keywords.to_prompt_json()),
        ("Indicators", serde_json::to_string_pretty(&indicators(traj)).expect("indicators render")),
        ("trajectory", render_trajectory(traj)),
    ])?;
    let request = ChatRequest::new("", prompt).with_temperature(temperature);
    let (positive_sop, should_avoid) = ask_with_repair(chat, &request, |t| parse_analysis(t, label)).map_err(|e| match e {
        RepairError::Provider(p) => SkillError::Provider(p),
        RepairError::Invalid(m) => SkillError::MalformedAnalysis(m),
    })?;
    Ok(TrajectoryAnalysis { candidate_id: candidate_id(traj), label, positive_sop, should_avoid })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBatch {
    pub analyses: Vec<TrajectoryAnalysis>,
    /// `(candidate_id, reason)` for analyses dropped after failed repair.
    pub dropped: Vec<(String, String)>,
}

/// Analyzes each trajectory separately. Unparseable analyses are dropped
/// with a warning; provider failures abort the batch.
pub fn analyze_trajectories<'t>(
    chat: &ChatClient,
    trajectories: impl IntoIterator<Item = &'t Trajectory>,
    keywords: &Ingredients,
    temperature: f64,
) -> Result<AnalysisBatch, SkillError> {
    let mut batch = AnalysisBatch::default();
    for traj in trajectories {
        match analyze_trajectory(chat, traj, keywords, temperature) {
            Ok(a) => batch.analyses.push(a),
            Err(SkillError::MalformedAnalysis(reason)) => {
                let id = candidate_id(traj);
                log::warn!("dropping analysis of {id}: {reason}");
                batch.dropped.push((id, reason));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq)]
enum DocRejection {
    Invalid(Vec<SkillDocError>),
    NameChanged { expected: String, found: String },
}

impl std::fmt::Display for DocRejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DocRejection::Invalid(errs) => f.write_str(&markdown::describe_errors(errs)),
            DocRejection::NameChanged { expected, found } => {
                write!(f, "the skill name must stay `{expected}` (got `{found}`)")
            }
        }
    }
}

impl From<DocRejection> for SkillError {
    fn from(r: DocRejection) -> Self {
        match r {
            DocRejection::Invalid(errs) => SkillError::InvalidSkillDocument(errs),
            DocRejection::NameChanged { expected, found } => SkillError::NameChanged { expected, found },
        }
    }
}

fn parse_document(text: &str, required_name: Option<&str>) -> Result<(String, SkillOutline), DocRejection> {
    let doc = strip_code_fence(text);
    let outline = validate_skill_markdown(doc).map_err(DocRejection::Invalid)?;
    if let Some(expected) = required_name {
        if outline.name != expected {
            return Err(DocRejection::NameChanged { expected: expected.to_string(), found: outline.name });
        }
    }
    Ok((format!("{}\n", doc.trim_end()), outline))
}

fn repair_to_skill_error(e: RepairError<DocRejection>) -> SkillError {
    match e {
        RepairError::Provider(p) => SkillError::Provider(p),
        RepairError::Invalid(r) => r.into(),
    }
}

/// Where a new skill comes from and when it was built.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillOrigin {
    pub provenance: Option<String>,
    pub created_at: String,
}

/// Builds one skill from a set of analyses. The id is derived from the
/// skill name and build time, unique within `library`.
pub fn distill_cluster_skill(
    chat: &ChatClient,
    analyses: &[TrajectoryAnalysis],
    keywords: &Ingredients,
    library: &SkillLibrary,
    origin: SkillOrigin,
    temperature: f64,
) -> Result<Skill, SkillError> {
    if analyses.is_empty() {
        return Err(SkillError::NoAnalyses);
    }
    let prompt = prompts::BUILD_SKILL.fill(&[
        ("keywords", keywords.to_prompt_json()),
        ("candidate_analyses", serde_json::to_string_pretty(analyses).expect("analyses serialize")),
    ])?;
    let request = ChatRequest::new("", prompt).with_temperature(temperature);
    let (document, outline) = ask_with_repair(chat, &request, |t| parse_document(t, None)).map_err(repair_to_skill_error)?;
    Ok(Skill {
        skill_id: library.fresh_skill_id(&outline.name, &origin.created_at),
        name: outline.name,
        description: outline.description,
        document,
        keywords: keywords.clone(),
        cluster_provenance: origin.provenance,
        revision: 1,
        created_at: origin.created_at,
    })
}

/// Rewrites `skill` using one analysis. Id, name, provenance and creation
/// time are preserved; the revision increases by one.
pub fn refine_skill(
    chat: &ChatClient,
    skill: &Skill,
    analysis: &TrajectoryAnalysis,
    temperature: f64,
) -> Result<Skill, SkillError> {
    let prompt = prompts::REFINE_SKILL.fill(&[
        ("skill", skill.document.clone()),
        ("skill_analysis", analysis.guidance().to_string()),
        ("label", analysis.label.as_str().to_string()),
    ])?;
    let request = ChatRequest::new("", prompt).with_temperature(temperature);
    let (document, outline) =
        ask_with_repair(chat, &request, |t| parse_document(t, Some(&skill.name))).map_err(repair_to_skill_error)?;
    Ok(Skill { description: outline.description, document, revision: skill.revision + 1, ..skill.clone() })
}
