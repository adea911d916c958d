//! Chat-completion and text-embedding backends.
//!
//! Every pipeline stage talks to a [`ChatClient`] or an [`EmbeddingClient`].
//! Both wrap a pluggable backend: the OpenAI-compatible HTTP backend in
//! [`live`] or the scripted replay backends in [`mock`]. Clients own the
//! cross-cutting rules (request validation, the per-run call budget, and
//! embedding normalization) so backends stay thin.

pub mod live;
pub mod mock;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("call budget of {limit} exhausted")]
    BudgetExceeded { limit: u64 },
    #[error("scripted scenario `{scenario}` has no response for step {step}")]
    MockExhausted { scenario: String, step: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding backend returned a degenerate vector: {0}")]
    DegenerateEmbedding(String),
    #[error("provider configuration error: {0}")]
    Config(String),
}

/// Tool descriptor offered to the model. The pipeline only ever offers
/// `run_code`, which takes a single string argument `code`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub argument: String,
}

impl ToolSchema {
    pub fn run_code() -> Self {
        ToolSchema {
            name: RUN_CODE.to_string(),
            description: "Execute a Python solver script and return its stdout, stderr and exit status.".into(),
            argument: "code".into(),
        }
    }
}

pub const RUN_CODE: &str = "run_code";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    #[serde(default)]
    pub temperature: f64,
    pub max_output_length: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_schemas: Option<Vec<ToolSchema>>,
}

impl ChatRequest {
    pub const DEFAULT_MAX_OUTPUT: u32 = 8192;

    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        ChatRequest {
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature: 0.0,
            max_output_length: Self::DEFAULT_MAX_OUTPUT,
            tool_schemas: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_tools(mut self, tools: Vec<ToolSchema>) -> Self {
        self.tool_schemas = Some(tools);
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.user_text.is_empty() {
            return Err(ProviderError::InvalidRequest("user_text is empty".into()));
        }
        if self.max_output_length == 0 {
            return Err(ProviderError::InvalidRequest("max_output_length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    ToolCall,
    Length,
    Error,
}

/// A single model turn. The type admits at most one tool call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub tool_call: Option<ToolCall>,
    pub finish_reason: FinishReason,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ChatResponse { text: text.into(), tool_call: None, finish_reason: FinishReason::Stop }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

pub trait EmbeddingBackend: Send + Sync {
    /// Raw, possibly unnormalized embedding.
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

/// Call counter shared by every client of one run.
#[derive(Debug, Default)]
pub struct CallBudget {
    limit: Option<u64>,
    used: AtomicU64,
}

impl CallBudget {
    pub fn new(limit: Option<u64>) -> Arc<Self> {
        Arc::new(CallBudget { limit, used: AtomicU64::new(0) })
    }

    pub fn unlimited() -> Arc<Self> {
        Self::new(None)
    }

    fn acquire(&self) -> Result<(), ProviderError> {
        let prev = self.used.fetch_add(1, Ordering::SeqCst);
        match self.limit {
            Some(limit) if prev >= limit => {
                self.used.fetch_sub(1, Ordering::SeqCst);
                Err(ProviderError::BudgetExceeded { limit })
            }
            _ => Ok(()),
        }
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }
}

#[derive(Clone)]
pub struct ChatClient {
    backend: Arc<dyn ChatBackend>,
    budget: Arc<CallBudget>,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient").field("budget", &self.budget).finish_non_exhaustive()
    }
}

impl ChatClient {
    pub fn new(backend: Arc<dyn ChatBackend>, budget: Arc<CallBudget>) -> Self {
        ChatClient { backend, budget }
    }

    pub fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        self.budget.acquire()?;
        self.backend.complete(request)
    }
}

/// Unit-length embedding. Construction through [`EmbeddingVector::from_raw`]
/// is the only way in, so every value in circulation has norm 1 ± 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn from_raw(values: Vec<f64>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::DegenerateEmbedding("zero-dimensional vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::DegenerateEmbedding("non-finite component".into()));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(ProviderError::DegenerateEmbedding("zero vector".into()));
        }
        Ok(EmbeddingVector(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = ProviderError;
    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::from_raw(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub(crate) fn l2_norm(values: &[f64]) -> f64 {
    // Scale first so huge or tiny components do not overflow/underflow.
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * values.iter().map(|v| (v / scale) * (v / scale)).sum::<f64>().sqrt()
}

#[derive(Clone)]
pub struct EmbeddingClient {
    backend: Arc<dyn EmbeddingBackend>,
}

impl std::fmt::Debug for EmbeddingClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingClient").finish_non_exhaustive()
    }
}

impl EmbeddingClient {
    pub fn new(backend: Arc<dyn EmbeddingBackend>) -> Self {
        EmbeddingClient { backend }
    }

    pub fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::EmptyText);
        }
        self.backend.embed_raw(text)
    }

    /// Embeds `text` and L2-normalizes on ingestion.
    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        EmbeddingVector::from_raw(self.embed_raw(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    #[default]
    Mock,
}

/// One provider block of the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Scenario file replayed by the mock backend.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_api_key_env() -> String {
    "OPTSKILLS_API_KEY".into()
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: BackendKind::Mock,
            base_url: None,
            model: None,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            scenario: None,
            api_key_env: default_api_key_env(),
        }
    }
}

impl ProviderConfig {
    fn live_settings(&self) -> Result<live::LiveSettings, ProviderError> {
        let base_url = self
            .base_url
            .clone()
            .ok_or_else(|| ProviderError::Config("live backend requires base_url".into()))?;
        let model = self.model.clone().ok_or_else(|| ProviderError::Config("live backend requires model".into()))?;
        Ok(live::LiveSettings {
            base_url,
            model,
            timeout: std::time::Duration::from_secs(self.timeout_secs),
            retry: live::RetryPolicy::standard(self.max_retries),
            api_key: std::env::var(&self.api_key_env).ok(),
        })
    }

    fn scenario_path(&self) -> Result<&PathBuf, ProviderError> {
        self.scenario.as_ref().ok_or_else(|| ProviderError::Config("mock backend requires a scenario file".into()))
    }

    pub fn build_chat(&self, budget: Arc<CallBudget>) -> Result<ChatClient, ProviderError> {
        let backend: Arc<dyn ChatBackend> = match self.kind {
            BackendKind::Live => Arc::new(live::LiveChat::new(self.live_settings()?)),
            BackendKind::Mock => Arc::new(mock::ScriptedChat::from_file(self.scenario_path()?)?),
        };
        Ok(ChatClient::new(backend, budget))
    }

    pub fn build_embedding(&self) -> Result<EmbeddingClient, ProviderError> {
        let backend: Arc<dyn EmbeddingBackend> = match self.kind {
            BackendKind::Live => Arc::new(live::LiveEmbedding::new(self.live_settings()?)),
            BackendKind::Mock => match &self.scenario {
                Some(path) => Arc::new(mock::MockEmbedder::from_file(path)?),
                None => Arc::new(mock::MockEmbedder::hashing(mock::MockEmbedder::DEFAULT_DIMENSION)),
            },
        };
        Ok(EmbeddingClient::new(backend))
    }
}
