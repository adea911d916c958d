//! Offline backends: a chat backend replaying a scripted scenario in call
//! order, and an embedder driven by a fixed text→vector table with a
//! deterministic hashing fallback.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest, ChatResponse, EmbeddingBackend, FinishReason, ProviderError, ToolCall};

/// One entry of a mock scenario file. A record is either a model turn
/// (`text` and/or `tool_call`) or an injected transport failure (`error`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MockRecord {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<FinishReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MockRecord {
    pub fn text(text: impl Into<String>) -> Self {
        MockRecord { text: text.into(), ..Default::default() }
    }

    pub fn tool(text: impl Into<String>, name: &str, arguments: impl Into<String>) -> Self {
        MockRecord {
            text: text.into(),
            tool_call: Some(ToolCall { name: name.into(), arguments: arguments.into() }),
            ..Default::default()
        }
    }

    /// `run_code` call carrying `code` as the JSON argument object.
    pub fn run_code(text: impl Into<String>, code: &str) -> Self {
        Self::tool(text, super::RUN_CODE, serde_json::json!({ "code": code }).to_string())
    }

    pub fn failure(message: impl Into<String>) -> Self {
        MockRecord { error: Some(message.into()), ..Default::default() }
    }

    fn to_response(&self) -> Result<ChatResponse, ProviderError> {
        if let Some(message) = &self.error {
            return Err(ProviderError::Transport(message.clone()));
        }
        let finish_reason = self.finish_reason.unwrap_or(if self.tool_call.is_some() {
            FinishReason::ToolCall
        } else {
            FinishReason::Stop
        });
        Ok(ChatResponse { text: self.text.clone(), tool_call: self.tool_call.clone(), finish_reason })
    }
}

pub fn write_scenario(path: &Path, records: &[MockRecord]) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(records).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}

pub fn read_scenario(path: &Path) -> Result<Vec<MockRecord>, ProviderError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ProviderError::Config(format!("cannot read scenario {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| ProviderError::Config(format!("invalid scenario {}: {e}", path.display())))
}

/// Replays [`MockRecord`]s strictly in call order. Calls are serialized
/// through an internal lock, so concurrent callers observe a total order.
#[derive(Debug)]
pub struct ScriptedChat {
    name: String,
    records: Vec<MockRecord>,
    state: Mutex<ReplayState>,
}

#[derive(Debug, Default)]
struct ReplayState {
    cursor: usize,
    requests: Vec<ChatRequest>,
}

impl ScriptedChat {
    pub fn new(name: impl Into<String>, records: Vec<MockRecord>) -> Self {
        ScriptedChat { name: name.into(), records, state: Mutex::new(ReplayState::default()) }
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::new(path.display().to_string(), read_scenario(path)?))
    }

    /// Requests received so far, in order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.state.lock().expect("mock lock poisoned").requests.clone()
    }

    pub fn remaining(&self) -> usize {
        self.records.len().saturating_sub(self.state.lock().expect("mock lock poisoned").cursor)
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let mut state = self.state.lock().expect("mock lock poisoned");
        let step = state.cursor;
        let record = self
            .records
            .get(step)
            .ok_or_else(|| ProviderError::MockExhausted { scenario: self.name.clone(), step })?;
        state.cursor += 1;
        state.requests.push(request.clone());
        record.to_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbedderScenario {
    #[serde(default)]
    dimension: Option<usize>,
    #[serde(default)]
    vectors: HashMap<String, Vec<f64>>,
}

/// Table-driven embedder. Texts missing from the table fall back to a
/// SHA-256 derived pseudo-random vector when a fallback dimension is set.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    vectors: HashMap<String, Vec<f64>>,
    fallback_dimension: Option<usize>,
}

impl MockEmbedder {
    pub const DEFAULT_DIMENSION: usize = 32;

    pub fn hashing(dimension: usize) -> Self {
        MockEmbedder { vectors: HashMap::new(), fallback_dimension: Some(dimension) }
    }

    pub fn with_vectors<I, S>(vectors: I, fallback_dimension: Option<usize>) -> Self
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        MockEmbedder { vectors: vectors.into_iter().map(|(k, v)| (k.into(), v)).collect(), fallback_dimension }
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("cannot read embedder scenario {}: {e}", path.display())))?;
        let scenario: EmbedderScenario = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Config(format!("invalid embedder scenario {}: {e}", path.display())))?;
        Ok(MockEmbedder { vectors: scenario.vectors, fallback_dimension: scenario.dimension })
    }
}

pub(crate) fn hash_vector(text: &str, dimension: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dimension);
    let mut block = 0u32;
    while out.len() < dimension {
        let mut hasher = Sha256::new();
        hasher.update(block.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        for chunk in digest.chunks_exact(8) {
            if out.len() == dimension {
                break;
            }
            let word = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            // Top 53 bits → [0,1) → [-1,1).
            out.push((word >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0);
        }
        block += 1;
    }
    out
}

impl EmbeddingBackend for MockEmbedder {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        if let Some(v) = self.vectors.get(text) {
            return Ok(v.clone());
        }
        match self.fallback_dimension {
            Some(dim) => Ok(hash_vector(text, dim)),
            None => Err(ProviderError::Transport(format!("mock embedder has no vector for {text:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tool_call_record_round_trips_through_scenario_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.json");
        let records = vec![
            MockRecord::run_code("<formulation>{}</formulation>", "print('RESULT: 1')"),
            MockRecord::text("<answer>1</answer>"),
        ];
        write_scenario(&path, &records).unwrap();
        let chat = ScriptedChat::from_file(&path).unwrap();
        let r = chat.complete(&ChatRequest::new("s", "u")).unwrap();
        let call = r.tool_call.unwrap();
        assert_eq!(call.name, "run_code");
        let args: serde_json::Value = serde_json::from_str(&call.arguments).unwrap();
        assert_eq!(args["code"], "print('RESULT: 1')");
        assert_eq!(r.finish_reason, FinishReason::ToolCall);
        assert_eq!(chat.complete(&ChatRequest::new("s", "u")).unwrap().text, "<answer>1</answer>");
    }

    #[test]
    fn exhausted_scenario_reports_step() {
        let chat = ScriptedChat::new("empty", vec![]);
        assert_eq!(
            chat.complete(&ChatRequest::new("s", "u")),
            Err(ProviderError::MockExhausted { scenario: "empty".into(), step: 0 })
        );
    }

    #[test]
    fn injected_failure_surfaces_as_transport_error() {
        let chat = ScriptedChat::new("f", vec![MockRecord::failure("boom")]);
        assert_eq!(chat.complete(&ChatRequest::new("s", "u")), Err(ProviderError::Transport("boom".into())));
    }

    #[test]
    fn replay_is_byte_identical_across_instances() {
        let records = vec![MockRecord::text("a"), MockRecord::run_code("b", "x=1"), MockRecord::text("c")];
        let run = || {
            let chat = ScriptedChat::new("r", records.clone());
            (0..3)
                .map(|_| serde_json::to_string(&chat.complete(&ChatRequest::new("s", "u")).unwrap()).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn hashing_fallback_is_deterministic_and_sized() {
        let e = MockEmbedder::hashing(10);
        let a = e.embed_raw("abc").unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, e.embed_raw("abc").unwrap());
        assert_ne!(a, e.embed_raw("abd").unwrap());
        assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn table_embedder_without_fallback_errors_on_unknown_text() {
        let e = MockEmbedder::with_vectors([("a", vec![1.0])], None);
        assert!(e.embed_raw("b").is_err());
    }
}
