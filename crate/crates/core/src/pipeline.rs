//! Phase orchestration: discover (cluster-based distillation), learn
//! (online library updates) and eval (skill-guided inference), plus the
//! append-only run directory each phase writes into.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archetype::{ArchetypeEncoder, ArchetypeError, ArchetypeRepresentation, ExtractionMode, Ingredients};
use crate::clock::Clock;
use crate::clustering::{dbscan, ClusteringError, NOISE};
use crate::config::{ConfigError, ExecutorKind, RunConfig};
use crate::dataset::{DatasetError, ProblemInstance};
use crate::evaluation::{answers_match, pass_table, EvaluationError, PassTable};
use crate::providers::{CallBudget, ChatClient, EmbeddingClient, ProviderConfig, ProviderError};
use crate::rollout::{
    label_trajectory, rollout_portfolio, run_agent_loop, AgentLimits, Episode, EpisodeSkill, RolloutContext, RolloutError,
    SolverCatalog, Trajectory,
};
use crate::sandbox::{Executor, SandboxError, ScriptedExecutor, SubprocessExecutor};
use crate::skills::{
    analyze_trajectories, distill_cluster_skill, learn_step, save_library, select_skill, LearnContext, LibraryUpdate,
    SelectionMode, Selector, SkillError, SkillLibrary, SkillOrigin, TrajectoryAnalysis,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

fn io_context(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Io { context, source }
}

/// A fresh directory under the runs root; never reused.
#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates `<root>/<stamp>-<phase>`, adding `-2`, `-3`, ... if taken.
    pub fn create(root: &Path, clock: &Clock, phase: &str) -> Result<Self, PipelineError> {
        fs::create_dir_all(root).map_err(io_context(format!("creating {}", root.display())))?;
        let base = format!("{}-{phase}", clock.compact());
        for n in 1u32.. {
            let name = if n == 1 { base.clone() } else { format!("{base}-{n}") };
            let path = root.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_context(format!("creating {}", path.display()))(e)),
            }
        }
        unreachable!("run directory suffixes exhausted")
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.path.join(name);
        fs::write(&path, bytes).map_err(io_context(format!("writing {}", path.display())))
    }

    pub fn append_jsonl<'a, T: Serialize + 'a>(
        &self,
        name: &str,
        records: impl IntoIterator<Item = &'a T>,
    ) -> Result<(), PipelineError> {
        let path = self.path.join(name);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_context(format!("opening {}", path.display())))?;
        for r in records {
            let mut line = serde_json::to_vec(r).expect("record serializes");
            line.push(b'\n');
            file.write_all(&line).map_err(io_context(format!("writing {}", path.display())))?;
        }
        Ok(())
    }
}

/// Chat clients per pipeline role.
#[derive(Debug, Clone)]
pub struct Roles {
    pub extractor: ChatClient,
    pub solver_selector: ChatClient,
    pub executor: ChatClient,
    pub analyst: ChatClient,
    pub builder: ChatClient,
    pub skill_selector: ChatClient,
    pub refiner: ChatClient,
}

impl Roles {
    /// Builds role clients; roles without their own block share one
    /// client built from `default`.
    pub fn from_config(cfg: &crate::config::ProvidersConfig, budget: Arc<CallBudget>) -> Result<Self, ProviderError> {
        let mut shared: Option<ChatClient> = None;
        let mut build = |block: &Option<ProviderConfig>| -> Result<ChatClient, ProviderError> {
            match block {
                Some(b) => b.build_chat(budget.clone()),
                None => {
                    if shared.is_none() {
                        shared = Some(cfg.default.build_chat(budget.clone())?);
                    }
                    Ok(shared.clone().expect("just built"))
                }
            }
        };
        Ok(Roles {
            extractor: build(&cfg.extractor)?,
            solver_selector: build(&cfg.solver_selector)?,
            executor: build(&cfg.executor)?,
            analyst: build(&cfg.analyst)?,
            builder: build(&cfg.builder)?,
            skill_selector: build(&cfg.skill_selector)?,
            refiner: build(&cfg.refiner)?,
        })
    }
}

/// Everything the phases need, built once from a [`RunConfig`].
pub struct Pipeline {
    pub config: RunConfig,
    pub roles: Roles,
    pub embedder: EmbeddingClient,
    pub executor: Arc<dyn Executor>,
    pub catalog: SolverCatalog,
    pub clock: Clock,
    pub encoder: ArchetypeEncoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemError {
    pub problem_id: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeRecord {
    pub id: String,
    pub cluster: i64,
    pub ingredients: Ingredients,
    pub edited_problem: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub problem_id: String,
    pub trajectories: usize,
    pub positives: usize,
    pub analyses: usize,
    pub dropped_analyses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverReport {
    pub problems: usize,
    pub represented: usize,
    pub rollouts: Vec<RolloutSummary>,
    pub cluster_count: usize,
    pub cluster_sizes: Vec<usize>,
    pub skills_added: Vec<String>,
    pub skipped_clusters: Vec<usize>,
    pub library_version: u64,
    pub library_size: usize,
    pub errors: Vec<ProblemError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub problems: usize,
    pub reused: usize,
    pub expanded: usize,
    pub skills_added: usize,
    pub skills_refined: usize,
    pub version_before: u64,
    pub library_version: u64,
    pub library_size: usize,
    pub updates: Vec<LibraryUpdate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub problem_id: String,
    pub benchmark: String,
    pub skill_id: Option<String>,
    pub candidate_answer: Option<f64>,
    pub ground_truth: Option<f64>,
    pub correct: Option<bool>,
    pub turns_used: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub problems: usize,
    pub library_version: u64,
    pub library_size: usize,
    pub pass_at_1: Option<PassTable>,
    pub records: Vec<EvalRecord>,
}

fn problem_error(problem_id: &str, stage: &str, e: impl std::fmt::Display) -> ProblemError {
    ProblemError { problem_id: problem_id.to_string(), stage: stage.to_string(), message: e.to_string() }
}

/// Slot-wise union of ingredient lists, first occurrence first.
fn merge_ingredients<'a>(items: impl IntoIterator<Item = &'a Ingredients>) -> Ingredients {
    let (mut v, mut c, mut o) = (Vec::new(), Vec::new(), Vec::new());
    for i in items {
        v.extend(i.variable.iter().cloned());
        c.extend(i.constraint.iter().cloned());
        o.extend(i.objective.iter().cloned());
    }
    Ingredients::new(&v, &c, &o)
}

impl Pipeline {
    pub fn from_config(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let budget = CallBudget::new(config.call_budget);
        let roles = Roles::from_config(&config.providers, budget)?;
        let embedder = config.providers.embedding.build_embedding()?;
        let executor: Arc<dyn Executor> = match config.executor.kind {
            ExecutorKind::Subprocess => Arc::new(SubprocessExecutor {
                limits: config.executor.limits(),
                env_allowlist: config.executor.env_allowlist.clone(),
            }),
            ExecutorKind::Scripted => {
                let path = config.executor.scenario.as_ref().expect("validated");
                Arc::new(ScriptedExecutor::from_file(path)?)
            }
        };
        let catalog = match &config.paths.solver_catalog {
            Some(p) => SolverCatalog::from_file(p)?,
            None => SolverCatalog::builtin(),
        };
        if config.top_k > catalog.len() {
            return Err(ConfigError::Invalid(format!("top_k {} exceeds catalog size {}", config.top_k, catalog.len())).into());
        }
        let clock = config.fixed_timestamp.clone().map_or(Clock::System, Clock::Fixed);
        let encoder = ArchetypeEncoder {
            chat: roles.extractor.clone(),
            embedder: embedder.clone(),
            alpha: config.alpha,
            normalize_components: config.normalize_components,
            temperature: config.temperature,
        };
        Ok(Pipeline { config, roles, embedder, executor, catalog, clock, encoder })
    }

    pub fn limits(&self) -> AgentLimits {
        AgentLimits { max_turns: self.config.max_turns, temperature: self.config.temperature, ..AgentLimits::default() }
    }

    pub fn rollout_context(&self) -> RolloutContext<'_> {
        RolloutContext {
            selector: &self.roles.solver_selector,
            agent: &self.roles.executor,
            executor: self.executor.as_ref(),
            catalog: &self.catalog,
            top_k: self.config.top_k,
            limits: self.limits(),
            tolerance: self.config.tolerance,
            max_parallel: self.config.max_parallel_rollouts,
        }
    }

    pub fn selector(&self) -> Selector<'_> {
        Selector {
            chat: &self.roles.skill_selector,
            embedder: Some(&self.embedder),
            prefilter: self.config.prefilter,
            temperature: self.config.temperature,
        }
    }

    /// Builds skills from clusters of problem archetypes: represent, roll
    /// out and analyze each problem, cluster the fused embeddings, and
    /// distill one skill per cluster that has at least one analysis.
    pub fn discover(
        &self,
        problems: &[ProblemInstance],
        library: &SkillLibrary,
        run: &RunDir,
    ) -> Result<(SkillLibrary, DiscoverReport), PipelineError> {
        let mut errors = Vec::new();
        let mut reprs: Vec<(usize, ArchetypeRepresentation)> = Vec::new();
        let mut analyses: Vec<Vec<TrajectoryAnalysis>> = vec![Vec::new(); problems.len()];
        let mut rollouts = Vec::new();
        let ctx = self.rollout_context();

        for (i, problem) in problems.iter().enumerate() {
            let repr = match self.encoder.represent(&problem.problem, ExtractionMode::Train) {
                Ok(r) => r,
                Err(ArchetypeError::Provider(e @ ProviderError::BudgetExceeded { .. })) => return Err(e.into()),
                Err(e) => {
                    errors.push(problem_error(&problem.id, "extract", e));
                    continue;
                }
            };
            let keywords = repr.extraction.ingredients.clone();
            reprs.push((i, repr));
            let tset = match rollout_portfolio(&ctx, problem, &keywords) {
                Ok(t) => t,
                Err(e) => {
                    errors.push(problem_error(&problem.id, "rollout", e));
                    continue;
                }
            };
            run.append_jsonl("trajectories.jsonl", tset.iter())?;
            match analyze_trajectories(&self.roles.analyst, tset.iter(), &keywords, self.config.temperature) {
                Ok(batch) => {
                    rollouts.push(RolloutSummary {
                        problem_id: problem.id.clone(),
                        trajectories: tset.len(),
                        positives: tset.positives.len(),
                        analyses: batch.analyses.len(),
                        dropped_analyses: batch.dropped.len(),
                    });
                    run.append_jsonl("analyses.jsonl", batch.analyses.iter())?;
                    analyses[i] = batch.analyses;
                }
                Err(e) => errors.push(problem_error(&problem.id, "analyze", e)),
            }
        }

        let mut next = library.clone();
        let mut skills_added = Vec::new();
        let mut skipped_clusters = Vec::new();
        let mut cluster_sizes = Vec::new();
        if !reprs.is_empty() {
            let vectors: Vec<_> = reprs.iter().map(|(_, r)| r.e.clone()).collect();
            let assignment = dbscan(&vectors, self.config.epsilon, self.config.min_samples)?;
            // Noise points become singleton groups so their experience is kept.
            let mut groups = assignment.clusters();
            groups.extend(assignment.labels.iter().enumerate().filter(|(_, &l)| l == NOISE).map(|(i, _)| vec![i]));
            let records: Vec<ArchetypeRecord> = reprs
                .iter()
                .zip(&assignment.labels)
                .map(|((i, r), &label)| ArchetypeRecord {
                    id: problems[*i].id.clone(),
                    cluster: label,
                    ingredients: r.extraction.ingredients.clone(),
                    edited_problem: r.extraction.edited_problem.clone(),
                    vector: r.e.values().to_vec(),
                })
                .collect();
            run.append_jsonl("archetypes.jsonl", records.iter())?;

            for (cluster_id, members) in groups.iter().enumerate() {
                cluster_sizes.push(members.len());
                let member_analyses: Vec<TrajectoryAnalysis> =
                    members.iter().flat_map(|&m| analyses[reprs[m].0].iter().cloned()).collect();
                if member_analyses.is_empty() {
                    skipped_clusters.push(cluster_id);
                    continue;
                }
                let keywords = merge_ingredients(members.iter().map(|&m| &reprs[m].1.extraction.ingredients));
                let created_at = self.clock.now();
                let origin = SkillOrigin { provenance: Some(format!("cluster-{cluster_id}")), created_at: created_at.clone() };
                match distill_cluster_skill(&self.roles.builder, &member_analyses, &keywords, &next, origin, self.config.temperature) {
                    Ok(skill) => {
                        skills_added.push(skill.skill_id.clone());
                        next.insert(skill, &created_at)?;
                    }
                    Err(e) => errors.push(problem_error(&format!("cluster-{cluster_id}"), "distill", e)),
                }
            }
        }
        let report = DiscoverReport {
            problems: problems.len(),
            represented: reprs.len(),
            rollouts,
            cluster_count: cluster_sizes.len(),
            cluster_sizes,
            skills_added,
            skipped_clusters,
            library_version: next.version(),
            library_size: next.len(),
            errors,
        };
        Ok((next, report))
    }

    /// Runs one learning step per problem, persisting the library to
    /// `library_dir` after every step that changed it.
    pub fn learn(
        &self,
        problems: &[ProblemInstance],
        library: &SkillLibrary,
        library_dir: &Path,
        run: &RunDir,
    ) -> Result<(SkillLibrary, LearnReport), PipelineError> {
        let ctx = LearnContext {
            encoder: &self.encoder,
            selector: self.selector(),
            rollout: self.rollout_context(),
            analyst: &self.roles.analyst,
            builder: &self.roles.builder,
            refiner: &self.roles.refiner,
            clock: &self.clock,
            temperature: self.config.temperature,
        };
        let mut current = library.clone();
        let mut updates = Vec::with_capacity(problems.len());
        for problem in problems {
            let (next, update) = learn_step(&ctx, problem, &current)?;
            if next.version() != current.version() {
                save_library(&next, library_dir)?;
            }
            run.append_jsonl("trajectories.jsonl", update.trajectories.iter())?;
            run.append_jsonl("updates.jsonl", std::iter::once(&update))?;
            current = next;
            updates.push(update);
        }
        let report = LearnReport {
            problems: problems.len(),
            reused: updates.iter().filter(|u| u.path == crate::skills::LearnPath::Reuse).count(),
            expanded: updates.iter().filter(|u| u.path == crate::skills::LearnPath::Expand).count(),
            skills_added: updates.iter().filter(|u| u.skill_added.is_some()).count(),
            skills_refined: updates.iter().filter(|u| u.skill_refined.is_some()).count(),
            version_before: library.version(),
            library_version: current.version(),
            library_size: current.len(),
            updates,
        };
        Ok((current, report))
    }

    /// Keyword vocabulary for eval-time extraction.
    pub fn keywords_list(&self, library: &SkillLibrary) -> Result<String, PipelineError> {
        match &self.config.paths.keywords_list {
            Some(p) => fs::read_to_string(p).map_err(io_context(format!("reading {}", p.display()))),
            None => Ok(library.keyword_vocabulary().to_prompt_json()),
        }
    }

    /// Skill-guided inference on each problem; Pass@1 over problems with a
    /// ground truth.
    pub fn evaluate(
        &self,
        problems: &[ProblemInstance],
        library: &SkillLibrary,
        run: &RunDir,
    ) -> Result<EvalReport, PipelineError> {
        if library.is_empty() {
            return Err(ConfigError::Invalid("eval requires non-empty library".into()).into());
        }
        let keywords_list = self.keywords_list(library)?;
        let selector = self.selector();
        let limits = self.limits();
        let mut records = Vec::with_capacity(problems.len());
        for problem in problems {
            let mut record = EvalRecord {
                problem_id: problem.id.clone(),
                benchmark: problem.benchmark_name().to_string(),
                skill_id: None,
                candidate_answer: None,
                ground_truth: problem.answer,
                correct: problem.answer.map(|_| false),
                turns_used: 0,
                error: None,
            };
            match self.eval_one(problem, library, &selector, &limits, &keywords_list) {
                Ok(traj) => {
                    record.skill_id = traj.skill_id.clone();
                    record.candidate_answer = traj.candidate_answer;
                    record.turns_used = traj.turns_used;
                    if let (Some(truth), Some(c)) = (problem.answer, traj.candidate_answer) {
                        record.correct = Some(answers_match(c, truth, self.config.tolerance).unwrap_or(false));
                    }
                    let traj = match problem.answer {
                        Some(truth) => label_trajectory(traj, truth, self.config.tolerance),
                        None => traj,
                    };
                    run.append_jsonl("trajectories.jsonl", std::iter::once(&traj))?;
                }
                Err(PipelineError::Provider(e @ ProviderError::BudgetExceeded { .. })) => return Err(e.into()),
                Err(e) => record.error = Some(e.to_string()),
            }
            run.append_jsonl("results.jsonl", std::iter::once(&record))?;
            records.push(record);
        }
        let scored: Vec<(&str, bool)> =
            records.iter().filter_map(|r| r.correct.map(|c| (r.benchmark.as_str(), c))).collect();
        let pass_at_1 = if scored.is_empty() { None } else { Some(pass_table(scored)?) };
        Ok(EvalReport {
            problems: problems.len(),
            library_version: library.version(),
            library_size: library.len(),
            pass_at_1,
            records,
        })
    }

    fn eval_one(
        &self,
        problem: &ProblemInstance,
        library: &SkillLibrary,
        selector: &Selector<'_>,
        limits: &AgentLimits,
        keywords_list: &str,
    ) -> Result<Trajectory, PipelineError> {
        let repr = self
            .encoder
            .represent(&problem.problem, ExtractionMode::Eval { keywords_list })
            .map_err(|e| match e {
                ArchetypeError::Provider(p) => PipelineError::Provider(p),
                other => PipelineError::Skill(SkillError::Io(other.to_string())),
            })?;
        let decision = select_skill(selector, &repr, library, SelectionMode::Eval)?;
        let skill = library.get(&decision.skill_id).ok_or_else(|| SkillError::UnknownSkillId(decision.skill_id.clone()))?;
        let episode = Episode {
            problem_id: &problem.id,
            problem_text: &problem.problem,
            keywords: &repr.extraction.ingredients,
            skill: Some(EpisodeSkill { skill_id: &skill.skill_id, document: &skill.document }),
            solver: None,
        };
        Ok(run_agent_loop(&self.roles.executor, self.executor.as_ref(), &episode, limits)?)
    }
}

/// Copies the persisted library into `<library>/snapshots/v<version>/`.
pub fn snapshot_library(library_dir: &Path, library: &SkillLibrary) -> Result<PathBuf, PipelineError> {
    let target = library_dir.join("snapshots").join(format!("v{}", library.version()));
    if target.exists() {
        return Err(ConfigError::Invalid(format!("snapshot {} already exists", target.display())).into());
    }
    save_library(library, &target)?;
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_never_collide() {
        let root = tempfile::tempdir().unwrap();
        let clock = Clock::Fixed("2026-01-01T00:00:00Z".into());
        let a = RunDir::create(root.path(), &clock, "eval").unwrap();
        let b = RunDir::create(root.path(), &clock, "eval").unwrap();
        assert_ne!(a.path(), b.path());
        assert!(b.path().ends_with("20260101T000000Z-eval-2"));
        a.append_jsonl("x.jsonl", [1, 2].iter()).unwrap();
        a.append_jsonl("x.jsonl", [3].iter()).unwrap();
        assert_eq!(fs::read_to_string(a.path().join("x.jsonl")).unwrap(), "1\n2\n3\n");
    }

    #[test]
    fn merged_ingredients_keep_first_occurrence() {
        let a = Ingredients::new(&["x", "y"], &["c"], &[]);
        let b = Ingredients::new(&["y", "z"], &[], &["o"]);
        let m = merge_ingredients([&a, &b]);
        assert_eq!(m.variable, vec!["x", "y", "z"]);
        assert_eq!(m.objective, vec!["o"]);
    }
}
