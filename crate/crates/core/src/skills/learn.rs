//! One online learning step: reuse and refine a recalled skill, or expand
//! the library from a fresh portfolio rollout.

use serde::{Deserialize, Serialize};

use super::{
    analyze_trajectories, analyze_trajectory, distill_cluster_skill, refine_skill, Decision, SelectionMode, Selector,
    Skill, SkillDecision, SkillError, SkillLibrary, SkillOrigin,
};
use crate::archetype::{ArchetypeEncoder, ExtractionMode};
use crate::clock::Clock;
use crate::dataset::ProblemInstance;
use crate::providers::ChatClient;
use crate::rollout::{label_trajectory, rollout_portfolio, run_agent_loop, Episode, EpisodeSkill, Label, RolloutContext, Trajectory};

/// Points between sub-steps where a test can inject a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnStage {
    Extract,
    Recall,
    Judge,
    Rollout,
    Analyze,
    Refine,
    Distill,
    Commit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnPath {
    Reuse,
    Expand,
    /// Stopped before choosing a path (extraction failed).
    Aborted,
}

/// What one learning step did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryUpdate {
    pub problem_id: String,
    pub path: LearnPath,
    pub recall: Option<SkillDecision>,
    pub judge: Option<SkillDecision>,
    pub trajectory_count: usize,
    pub positive_count: usize,
    pub analysis_count: usize,
    pub dropped_analyses: usize,
    pub skill_added: Option<String>,
    pub skill_refined: Option<String>,
    pub version_before: u64,
    pub version_after: u64,
    pub errors: Vec<String>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

pub struct LearnContext<'a> {
    pub encoder: &'a ArchetypeEncoder,
    pub selector: Selector<'a>,
    pub rollout: RolloutContext<'a>,
    pub analyst: &'a ChatClient,
    pub builder: &'a ChatClient,
    pub refiner: &'a ChatClient,
    pub clock: &'a Clock,
    pub temperature: f64,
}

pub fn learn_step(
    ctx: &LearnContext<'_>,
    problem: &ProblemInstance,
    library: &SkillLibrary,
) -> Result<(SkillLibrary, LibraryUpdate), SkillError> {
    learn_step_with_faults(ctx, problem, library, &mut |_| Ok(()))
}

/// [`learn_step`] with a hook called before each sub-step. A hook error
/// aborts the step and is returned; `library` is never modified in place,
/// so the caller still holds the previous version.
pub fn learn_step_with_faults(
    ctx: &LearnContext<'_>,
    problem: &ProblemInstance,
    library: &SkillLibrary,
    fault: &mut dyn FnMut(LearnStage) -> Result<(), SkillError>,
) -> Result<(SkillLibrary, LibraryUpdate), SkillError> {
    let mut next = library.clone();
    let mut update = LibraryUpdate {
        problem_id: problem.id.clone(),
        path: LearnPath::Aborted,
        recall: None,
        judge: None,
        trajectory_count: 0,
        positive_count: 0,
        analysis_count: 0,
        dropped_analyses: 0,
        skill_added: None,
        skill_refined: None,
        version_before: library.version(),
        version_after: library.version(),
        errors: Vec::new(),
        trajectories: Vec::new(),
    };
    macro_rules! soft {
        ($expr:expr, $update:ident) => {
            match $expr {
                Ok(v) => v,
                Err(e) => {
                    $update.errors.push(e.to_string());
                    $update.version_after = library.version();
                    return Ok((library.clone(), $update));
                }
            }
        };
    }

    let Some(truth) = problem.answer else {
        update.errors.push(format!("problem `{}` has no ground-truth answer", problem.id));
        return Ok((next, update));
    };
    fault(LearnStage::Extract)?;
    let repr = soft!(ctx.encoder.represent(&problem.problem, ExtractionMode::Train), update);
    let keywords = repr.extraction.ingredients.clone();

    fault(LearnStage::Recall)?;
    let all: Vec<&Skill> = library.iter().collect();
    let recall = ctx.selector.select(&repr, &all, SelectionMode::Recall).unwrap_or_else(|e| {
        update.errors.push(format!("recall failed, treated as reject: {e}"));
        declined(Decision::Reject)
    });
    update.recall = Some(recall.clone());

    let mut reused: Option<&Skill> = None;
    if recall.decision.accepts() {
        fault(LearnStage::Judge)?;
        let recalled = library.get(&recall.skill_id).expect("selector verified membership");
        let judge = ctx.selector.select(&repr, &[recalled], SelectionMode::Judge).unwrap_or_else(|e| {
            update.errors.push(format!("judge failed, treated as new: {e}"));
            declined(Decision::New)
        });
        if judge.decision.accepts() {
            reused = Some(recalled);
        }
        update.judge = Some(judge);
    }

    if let Some(skill) = reused {
        update.path = LearnPath::Reuse;
        fault(LearnStage::Rollout)?;
        let episode = Episode {
            problem_id: &problem.id,
            problem_text: &problem.problem,
            keywords: &keywords,
            skill: Some(EpisodeSkill { skill_id: &skill.skill_id, document: &skill.document }),
            solver: None,
        };
        let traj = soft!(
            run_agent_loop(ctx.rollout.agent, ctx.rollout.executor, &episode, &ctx.rollout.limits), update);
        let traj = label_trajectory(traj, truth, ctx.rollout.tolerance);
        update.trajectory_count = 1;
        update.positive_count = usize::from(traj.label == Label::Positive);
        update.trajectories.push(traj.clone());

        fault(LearnStage::Analyze)?;
        let analysis = match analyze_trajectory(ctx.analyst, &traj, &keywords, ctx.temperature) {
            Ok(a) => a,
            Err(SkillError::MalformedAnalysis(m)) => {
                update.dropped_analyses = 1;
                update.errors.push(format!("analysis dropped: {m}"));
                return Ok((next, update));
            }
            Err(e) => soft!(Err(e), update),
        };
        update.analysis_count = 1;

        fault(LearnStage::Refine)?;
        let refined = soft!(refine_skill(ctx.refiner, skill, &analysis, ctx.temperature), update);
        fault(LearnStage::Commit)?;
        update.skill_refined = Some(refined.skill_id.clone());
        soft!(next.replace(refined, &ctx.clock.now()), update);
    } else {
        update.path = LearnPath::Expand;
        fault(LearnStage::Rollout)?;
        let tset = soft!(rollout_portfolio(&ctx.rollout, problem, &keywords), update);
        update.trajectory_count = tset.len();
        update.positive_count = tset.positives.len();
        update.trajectories = tset.iter().cloned().collect();
        if tset.positives.is_empty() {
            return Ok((next, update));
        }

        fault(LearnStage::Analyze)?;
        let batch = soft!(analyze_trajectories(ctx.analyst, tset.iter(), &keywords, ctx.temperature), update);
        update.analysis_count = batch.analyses.len();
        update.dropped_analyses = batch.dropped.len();
        if batch.analyses.is_empty() {
            update.errors.push("every analysis was dropped".into());
            return Ok((next, update));
        }

        fault(LearnStage::Distill)?;
        let created_at = ctx.clock.now();
        let origin = SkillOrigin { provenance: Some(format!("learn:{}", problem.id)), created_at: created_at.clone() };
        let skill = soft!(
            distill_cluster_skill(ctx.builder, &batch.analyses, &keywords, library, origin, ctx.temperature), update);
        fault(LearnStage::Commit)?;
        update.skill_added = Some(skill.skill_id.clone());
        soft!(next.insert(skill, &created_at), update);
    }
    update.version_after = next.version();
    Ok((next, update))
}

fn declined(decision: Decision) -> SkillDecision {
    SkillDecision { decision, skill_id: String::new(), reason: "selection failed".into(), confidence: 0.0 }
}
