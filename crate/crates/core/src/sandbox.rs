//! Execution of generated solver scripts.
//!
//! [`SubprocessExecutor`] runs each script as a child process in its own
//! process group inside a scratch directory, caps captured output, and kills
//! the whole group on timeout. [`ScriptedExecutor`] replays canned
//! observations for offline runs.
//!
//! There is no network or filesystem isolation beyond the scratch
//! directory: generated code is trusted.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::rollout::parse_result_line;

pub const TRUNCATION_MARKER: &str = "\n[... output truncated ...]\n";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SandboxError {
    #[error("failed to spawn interpreter: {0}")]
    SpawnFailure(String),
    #[error("sandbox i/o error: {0}")]
    Io(String),
    #[error("scripted executor has no observation for step {step}")]
    ScenarioExhausted { step: usize },
    #[error("executor configuration error: {0}")]
    Config(String),
}

/// What one script execution produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionObservation {
    pub stdout: String,
    pub stderr: String,
    /// `None` when the process was terminated by a signal.
    pub exit_status: Option<i32>,
    /// Seconds.
    pub wall_time: f64,
    pub timed_out: bool,
    pub parsed_result: Option<f64>,
}

impl ExecutionObservation {
    /// Observation for a script that printed `stdout` and exited cleanly.
    pub fn from_stdout(stdout: impl Into<String>) -> Self {
        let stdout = stdout.into();
        let parsed_result = parse_result_line(&stdout);
        ExecutionObservation { stdout, stderr: String::new(), exit_status: Some(0), wall_time: 0.0, timed_out: false, parsed_result }
    }

    pub fn succeeded(&self) -> bool {
        self.exit_status == Some(0) && !self.timed_out
    }
}

pub trait Executor: Send + Sync {
    fn execute(&self, code: &str) -> Result<ExecutionObservation, SandboxError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub wall_time_limit: Duration,
    pub max_stdout_bytes: usize,
    pub working_directory: PathBuf,
    pub interpreter_command: Vec<String>,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        ExecutionLimits {
            wall_time_limit: Duration::from_secs(60),
            max_stdout_bytes: 1 << 20,
            working_directory: std::env::temp_dir(),
            interpreter_command: vec!["python3".into()],
        }
    }
}

pub const DEFAULT_ENV_ALLOWLIST: &[&str] = &["PATH", "HOME", "LANG", "LC_ALL", "PYTHONPATH", "TMPDIR"];

#[derive(Debug, Clone)]
pub struct SubprocessExecutor {
    pub limits: ExecutionLimits,
    /// Environment variables passed through to the child; everything else
    /// is cleared.
    pub env_allowlist: Vec<String>,
}

impl SubprocessExecutor {
    pub fn new(limits: ExecutionLimits) -> Self {
        SubprocessExecutor { limits, env_allowlist: DEFAULT_ENV_ALLOWLIST.iter().map(|s| s.to_string()).collect() }
    }
}

impl Executor for SubprocessExecutor {
    fn execute(&self, code: &str) -> Result<ExecutionObservation, SandboxError> {
        execute_script(code, &self.limits, &self.env_allowlist)
    }
}

/// Reads a pipe to EOF, keeping at most `cap` bytes.
fn capped_reader<R: Read + Send + 'static>(mut pipe: R, cap: usize) -> thread::JoinHandle<(Vec<u8>, bool)> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    if n > room {
                        truncated = true;
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        (kept, truncated)
    })
}

fn captured_text(bytes: Vec<u8>, truncated: bool, cap: usize) -> String {
    let mut text = String::from_utf8_lossy(&bytes).into_owned();
    if text.len() > cap {
        // Lossy decoding can widen a cut multibyte sequence.
        let mut cut = cap;
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        text.truncate(cut);
    }
    if truncated {
        text.push_str(TRUNCATION_MARKER);
    }
    text
}

fn kill_group(pgid: u32) {
    // SAFETY: plain syscall; a stale pgid only yields ESRCH.
    unsafe {
        libc::kill(-(pgid as libc::pid_t), libc::SIGKILL);
    }
}

/// Runs `code` with the configured interpreter in a fresh scratch directory.
pub fn execute_script(
    code: &str,
    limits: &ExecutionLimits,
    env_allowlist: &[String],
) -> Result<ExecutionObservation, SandboxError> {
    let (program, args) = limits
        .interpreter_command
        .split_first()
        .ok_or_else(|| SandboxError::Config("interpreter_command is empty".into()))?;
    if limits.wall_time_limit.is_zero() {
        return Err(SandboxError::Config("wall_time_limit must be positive".into()));
    }
    std::fs::create_dir_all(&limits.working_directory).map_err(|e| SandboxError::Io(e.to_string()))?;
    let scratch = tempfile::Builder::new()
        .prefix("optskills-exec-")
        .tempdir_in(&limits.working_directory)
        .map_err(|e| SandboxError::Io(e.to_string()))?;
    let script = scratch.path().join("solver.py");
    std::fs::write(&script, code).map_err(|e| SandboxError::Io(e.to_string()))?;

    let mut command = Command::new(program);
    command
        .args(args)
        .arg(&script)
        .current_dir(scratch.path())
        .env_clear()
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    for key in env_allowlist {
        if let Ok(value) = std::env::var(key) {
            command.env(key, value);
        }
    }

    let started = Instant::now();
    let mut child = command.spawn().map_err(|e| SandboxError::SpawnFailure(format!("{program}: {e}")))?;
    let pgid = child.id();
    let cap = limits.max_stdout_bytes;
    let stdout = capped_reader(child.stdout.take().expect("piped stdout"), cap);
    let stderr = capped_reader(child.stderr.take().expect("piped stderr"), cap);

    let (status, timed_out) = match child.wait_timeout(limits.wall_time_limit) {
        Ok(Some(status)) => {
            // The interpreter may have left background children behind.
            kill_group(pgid);
            (Some(status), false)
        }
        Ok(None) => {
            kill_group(pgid);
            (child.wait().ok(), true)
        }
        Err(e) => {
            kill_group(pgid);
            let _ = child.wait();
            return Err(SandboxError::Io(e.to_string()));
        }
    };
    let wall_time = started.elapsed().as_secs_f64();
    let (out, out_trunc) = stdout.join().unwrap_or_default();
    let (err, err_trunc) = stderr.join().unwrap_or_default();
    let stdout = captured_text(out, out_trunc, cap);
    let stderr = captured_text(err, err_trunc, cap);
    let exit_status = if timed_out { None } else { status.and_then(|s| s.code()) };
    Ok(ExecutionObservation {
        parsed_result: parse_result_line(&stdout),
        stdout,
        stderr,
        exit_status,
        wall_time,
        timed_out,
    })
}

/// Scenario entry for [`ScriptedExecutor`]; omitted fields take clean-run
/// defaults and `parsed_result` is derived from `stdout` when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScriptedObservation {
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default = "zero_exit")]
    pub exit_status: Option<i32>,
    #[serde(default)]
    pub timed_out: bool,
    #[serde(default)]
    pub parsed_result: Option<f64>,
    #[serde(default)]
    pub wall_time: f64,
}

fn zero_exit() -> Option<i32> {
    Some(0)
}

impl ScriptedObservation {
    pub fn stdout(stdout: impl Into<String>) -> Self {
        ScriptedObservation { stdout: stdout.into(), exit_status: Some(0), ..Default::default() }
    }

    pub fn into_observation(self) -> ExecutionObservation {
        let parsed_result = self.parsed_result.or_else(|| parse_result_line(&self.stdout));
        ExecutionObservation {
            stdout: self.stdout,
            stderr: self.stderr,
            exit_status: self.exit_status,
            wall_time: self.wall_time,
            timed_out: self.timed_out,
            parsed_result,
        }
    }
}

/// Replays observations strictly in call order.
#[derive(Debug)]
pub struct ScriptedExecutor {
    observations: Vec<ExecutionObservation>,
    state: Mutex<(usize, Vec<String>)>,
}

impl ScriptedExecutor {
    pub fn new(observations: Vec<ExecutionObservation>) -> Self {
        ScriptedExecutor { observations, state: Mutex::new((0, Vec::new())) }
    }

    pub fn from_file(path: &Path) -> Result<Self, SandboxError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SandboxError::Config(format!("cannot read executor scenario {}: {e}", path.display())))?;
        let records: Vec<ScriptedObservation> = serde_json::from_str(&text)
            .map_err(|e| SandboxError::Config(format!("invalid executor scenario {}: {e}", path.display())))?;
        Ok(Self::new(records.into_iter().map(ScriptedObservation::into_observation).collect()))
    }

    /// Scripts received so far, in call order.
    pub fn received(&self) -> Vec<String> {
        self.state.lock().expect("executor lock poisoned").1.clone()
    }
}

impl Executor for ScriptedExecutor {
    fn execute(&self, code: &str) -> Result<ExecutionObservation, SandboxError> {
        let mut state = self.state.lock().expect("executor lock poisoned");
        let step = state.0;
        let obs = self.observations.get(step).cloned().ok_or(SandboxError::ScenarioExhausted { step })?;
        state.0 += 1;
        state.1.push(code.to_string());
        Ok(obs)
    }
}
