//! Run configuration, read from a single TOML file.
//!
//! Relative paths are resolved against the directory of the config file.
//! Credentials never live here: live providers name the environment
//! variable that holds their API key.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archetype::DEFAULT_ALPHA;
use crate::clustering::{DEFAULT_EPSILON, DEFAULT_MIN_SAMPLES};
use crate::evaluation::MatchTolerance;
use crate::providers::ProviderConfig;
use crate::rollout::{DEFAULT_MAX_TURNS, DEFAULT_TOP_K};
use crate::sandbox::{ExecutionLimits, DEFAULT_ENV_ALLOWLIST};
use crate::skills::Prefilter;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Provider per pipeline role. Roles without their own block share the
/// `default` backend.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersConfig {
    #[serde(default)]
    pub default: ProviderConfig,
    pub extractor: Option<ProviderConfig>,
    pub solver_selector: Option<ProviderConfig>,
    pub executor: Option<ProviderConfig>,
    pub analyst: Option<ProviderConfig>,
    pub builder: Option<ProviderConfig>,
    pub skill_selector: Option<ProviderConfig>,
    pub refiner: Option<ProviderConfig>,
    #[serde(default)]
    pub embedding: ProviderConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    #[default]
    Subprocess,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutorConfig {
    #[serde(default)]
    pub kind: ExecutorKind,
    #[serde(default = "default_interpreter")]
    pub interpreter_command: Vec<String>,
    #[serde(default = "default_wall_time")]
    pub wall_time_limit_secs: f64,
    #[serde(default = "default_stdout_cap")]
    pub max_stdout_bytes: usize,
    /// Parent of the per-execution scratch directories; system temp dir when unset.
    pub working_directory: Option<PathBuf>,
    #[serde(default = "default_env_allowlist")]
    pub env_allowlist: Vec<String>,
    /// Observation list replayed by the scripted executor.
    pub scenario: Option<PathBuf>,
}

fn default_interpreter() -> Vec<String> {
    vec!["python3".into()]
}
fn default_wall_time() -> f64 {
    60.0
}
fn default_stdout_cap() -> usize {
    1 << 20
}
fn default_env_allowlist() -> Vec<String> {
    DEFAULT_ENV_ALLOWLIST.iter().map(|s| s.to_string()).collect()
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            kind: ExecutorKind::default(),
            interpreter_command: default_interpreter(),
            wall_time_limit_secs: default_wall_time(),
            max_stdout_bytes: default_stdout_cap(),
            working_directory: None,
            env_allowlist: default_env_allowlist(),
            scenario: None,
        }
    }
}

impl ExecutorConfig {
    pub fn limits(&self) -> ExecutionLimits {
        ExecutionLimits {
            wall_time_limit: Duration::from_secs_f64(self.wall_time_limit_secs),
            max_stdout_bytes: self.max_stdout_bytes,
            working_directory: self.working_directory.clone().unwrap_or_else(std::env::temp_dir),
            interpreter_command: self.interpreter_command.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Training problems (JSONL), split between discover and learn.
    pub dataset: Option<PathBuf>,
    /// Test problems (JSONL) for eval.
    pub eval_dataset: Option<PathBuf>,
    #[serde(default = "default_library")]
    pub library: PathBuf,
    #[serde(default = "default_runs")]
    pub runs: PathBuf,
    /// JSON solver catalog; the built-in catalog when unset.
    pub solver_catalog: Option<PathBuf>,
    /// Keyword vocabulary for eval-time extraction; derived from the
    /// library when unset.
    pub keywords_list: Option<PathBuf>,
}

fn default_library() -> PathBuf {
    PathBuf::from("library")
}
fn default_runs() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dataset: None,
            eval_dataset: None,
            library: default_library(),
            runs: default_runs(),
            solver_catalog: None,
            keywords_list: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub normalize_components: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_seed")]
    pub shuffle_seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_parallel")]
    pub max_parallel_rollouts: usize,
    /// Provider call cap for the whole run.
    pub call_budget: Option<u64>,
    /// Timestamp used instead of the wall clock, for reproducible runs.
    pub fixed_timestamp: Option<String>,
    #[serde(default)]
    pub tolerance: MatchTolerance,
    #[serde(default)]
    pub prefilter: Prefilter,
    #[serde(default)]
    pub providers: ProvidersConfig,
    #[serde(default)]
    pub executor: ExecutorConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_true() -> bool {
    true
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_min_samples() -> usize {
    DEFAULT_MIN_SAMPLES
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_max_turns() -> usize {
    DEFAULT_MAX_TURNS
}
fn default_seed() -> u64 {
    42
}
fn default_train_fraction() -> f64 {
    0.5
}
fn default_parallel() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config takes every default")
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, source: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: source.to_string(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        resolve_opt(base, &mut p.dataset);
        resolve_opt(base, &mut p.eval_dataset);
        resolve(base, &mut p.library);
        resolve(base, &mut p.runs);
        resolve_opt(base, &mut p.solver_catalog);
        resolve_opt(base, &mut p.keywords_list);
        resolve_opt(base, &mut self.executor.working_directory);
        resolve_opt(base, &mut self.executor.scenario);
        let pr = &mut self.providers;
        for block in [&mut pr.extractor, &mut pr.solver_selector, &mut pr.executor, &mut pr.analyst, &mut pr.builder, &mut pr.skill_selector, &mut pr.refiner]
            .into_iter()
            .flatten()
        {
            resolve_opt(base, &mut block.scenario);
        }
        resolve_opt(base, &mut pr.default.scenario);
        resolve_opt(base, &mut pr.embedding.scenario);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 2.0) {
            return bad(format!("epsilon {} outside (0, 2]", self.epsilon));
        }
        if self.min_samples == 0 || self.top_k == 0 || self.max_turns == 0 || self.max_parallel_rollouts == 0 {
            return bad("min_samples, top_k, max_turns and max_parallel_rollouts must be positive".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be >= 0", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad(format!("train_fraction {} outside [0, 1]", self.train_fraction));
        }
        let t = self.tolerance;
        if !(t.absolute >= 0.0 && t.relative >= 0.0 && t.absolute.is_finite() && t.relative.is_finite()) {
            return bad("tolerances must be finite and non-negative".into());
        }
        if !(self.executor.wall_time_limit_secs > 0.0 && self.executor.wall_time_limit_secs.is_finite()) {
            return bad("executor.wall_time_limit_secs must be positive".into());
        }
        if self.executor.kind == ExecutorKind::Subprocess && self.executor.interpreter_command.is_empty() {
            return bad("executor.interpreter_command is empty".into());
        }
        if self.executor.kind == ExecutorKind::Scripted && self.executor.scenario.is_none() {
            return bad("scripted executor requires executor.scenario".into());
        }
        if self.prefilter.keep == 0 {
            return bad("prefilter.keep must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.alpha, 0.55);
        assert_eq!(c.epsilon, 0.05);
        assert_eq!(c.min_samples, 1);
        assert_eq!(c.top_k, 3);
        assert_eq!(c.max_turns, 12);
        assert_eq!(c.temperature, 0.0);
        assert_eq!(c.shuffle_seed, 42);
        assert_eq!(c.train_fraction, 0.5);
        assert_eq!(c.max_parallel_rollouts, 1);
        assert_eq!(c.tolerance, MatchTolerance::default());
        assert_eq!(c.executor.limits().wall_time_limit, Duration::from_secs(60));
        assert_eq!(c.prefilter, Prefilter { enabled: true, threshold: 40, keep: 20 });
    }

    #[test]
    fn overrides_and_relative_paths() {
        let text = r#"
            alpha = 0.3
            top_k = 2
            [tolerance]
            relative = 0.001
            [providers.extractor]
            scenario = "mock/extractor.json"
            [executor]
            kind = "scripted"
            scenario = "mock/exec.json"
            [paths]
            dataset = "train.jsonl"
        "#;
        let mut c = RunConfig::from_toml(text, "mem").unwrap();
        c.resolve_paths(Path::new("/base"));
        assert_eq!(c.alpha, 0.3);
        assert_eq!(c.tolerance.absolute, 1e-6);
        assert_eq!(c.tolerance.relative, 0.001);
        assert_eq!(c.paths.dataset.as_deref(), Some(Path::new("/base/train.jsonl")));
        assert_eq!(c.paths.library, PathBuf::from("/base/library"));
        assert_eq!(
            c.providers.extractor.unwrap().scenario.as_deref(),
            Some(Path::new("/base/mock/extractor.json"))
        );
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        assert!(matches!(RunConfig::from_toml("alpha = 1.5", "m"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::from_toml("max_turns = 0", "m"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::from_toml("alpah = 0.5", "m"), Err(ConfigError::Parse { .. })));
        assert!(matches!(RunConfig::from_toml("[executor]\nkind = \"scripted\"", "m"), Err(ConfigError::Invalid(_))));
    }
}
