//! OpenAI-compatible HTTP backends (`/chat/completions`, `/embeddings`).

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, EmbeddingBackend, FinishReason, ProviderError, ToolCall};

/// Exponential backoff applied to transport-level failures only.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl RetryPolicy {
    /// `max_retries` attempts after the first, sleeping 1s, 2s, 4s, ...
    pub fn standard(max_retries: u32) -> Self {
        RetryPolicy { max_retries, base_delay: Duration::from_secs(1) }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

pub(crate) enum Attempt {
    Transient(String),
    Fatal(ProviderError),
}

pub(crate) fn with_retries<T>(
    policy: &RetryPolicy,
    mut sleep: impl FnMut(Duration),
    mut op: impl FnMut() -> Result<T, Attempt>,
) -> Result<T, ProviderError> {
    let mut retry = 0;
    loop {
        match op() {
            Ok(v) => return Ok(v),
            Err(Attempt::Fatal(e)) => return Err(e),
            Err(Attempt::Transient(msg)) => {
                if retry >= policy.max_retries {
                    return Err(ProviderError::Transport(format!("{msg} (after {retry} retries)")));
                }
                sleep(policy.delay(retry));
                retry += 1;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiveSettings {
    pub base_url: String,
    pub model: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub api_key: Option<String>,
}

// Deliberately not Debug: settings carry the API key.
struct HttpJson {
    agent: ureq::Agent,
    settings: LiveSettings,
}

impl HttpJson {
    fn new(settings: LiveSettings) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(settings.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpJson { agent, settings }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{}", self.settings.base_url.trim_end_matches('/'), path);
        with_retries(&self.settings.retry, std::thread::sleep, || {
            let mut request = self.agent.post(&url).header("Content-Type", "application/json");
            if let Some(key) = &self.settings.api_key {
                request = request.header("Authorization", &format!("Bearer {key}"));
            }
            let mut response = request.send_json(body).map_err(|e| Attempt::Transient(e.to_string()))?;
            let status = response.status().as_u16();
            if status == 429 || status >= 500 {
                return Err(Attempt::Transient(format!("http status {status}")));
            }
            if status >= 400 {
                let detail = response.body_mut().read_to_string().unwrap_or_default();
                return Err(Attempt::Fatal(ProviderError::Transport(format!(
                    "http status {status}: {}",
                    detail.chars().take(500).collect::<String>()
                ))));
            }
            response
                .body_mut()
                .read_json::<Value>()
                .map_err(|e| Attempt::Fatal(ProviderError::MalformedResponse(e.to_string())))
        })
    }
}

pub struct LiveChat {
    http: HttpJson,
}

impl LiveChat {
    pub fn new(settings: LiveSettings) -> Self {
        LiveChat { http: HttpJson::new(settings) }
    }
}

pub(crate) fn chat_body(model: &str, request: &ChatRequest) -> Value {
    let mut messages = Vec::new();
    if !request.system_text.is_empty() {
        messages.push(json!({ "role": "system", "content": request.system_text }));
    }
    messages.push(json!({ "role": "user", "content": request.user_text }));
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_length,
    });
    if let Some(tools) = &request.tool_schemas {
        let tools: Vec<Value> = tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": {
                            "type": "object",
                            "properties": { t.argument.clone(): { "type": "string" } },
                            "required": [t.argument],
                        }
                    }
                })
            })
            .collect();
        body["tools"] = Value::Array(tools);
        body["parallel_tool_calls"] = Value::Bool(false);
    }
    body
}

/// Maps a chat-completions payload onto [`ChatResponse`]. Only the first
/// tool call is kept.
pub(crate) fn parse_chat_payload(payload: &Value) -> Result<ChatResponse, ProviderError> {
    let choice = payload
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ProviderError::MalformedResponse("no choices".into()))?;
    let message = choice.get("message").ok_or_else(|| ProviderError::MalformedResponse("no message".into()))?;
    let text = message.get("content").and_then(Value::as_str).unwrap_or_default().to_string();
    let tool_call = message.get("tool_calls").and_then(|c| c.get(0)).map(|call| {
        let function = &call["function"];
        ToolCall {
            name: function["name"].as_str().unwrap_or_default().to_string(),
            arguments: function["arguments"].as_str().unwrap_or_default().to_string(),
        }
    });
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("tool_calls") | Some("function_call") => FinishReason::ToolCall,
        Some("length") => FinishReason::Length,
        Some("stop") | None => {
            if tool_call.is_some() {
                FinishReason::ToolCall
            } else {
                FinishReason::Stop
            }
        }
        Some(_) => FinishReason::Error,
    };
    Ok(ChatResponse { text, tool_call, finish_reason })
}

impl ChatBackend for LiveChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let payload = self.http.post("chat/completions", &chat_body(&self.http.settings.model, request))?;
        parse_chat_payload(&payload)
    }
}

pub struct LiveEmbedding {
    http: HttpJson,
}

impl LiveEmbedding {
    pub fn new(settings: LiveSettings) -> Self {
        LiveEmbedding { http: HttpJson::new(settings) }
    }
}

impl EmbeddingBackend for LiveEmbedding {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let payload = self.http.post("embeddings", &json!({ "model": self.http.settings.model, "input": text }))?;
        payload
            .get("data")
            .and_then(|d| d.get(0))
            .and_then(|d| d.get("embedding"))
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::MalformedResponse("no data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ProviderError::MalformedResponse("non-numeric component".into())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the given (status, body) pairs to successive connections and
    /// returns the request bodies it received.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn settings(url: String, retries: u32) -> LiveSettings {
        LiveSettings {
            base_url: url,
            model: "m".into(),
            timeout: Duration::from_secs(5),
            retry: RetryPolicy { max_retries: retries, base_delay: Duration::ZERO },
            api_key: Some("secret".into()),
        }
    }

    #[test]
    fn standard_backoff_doubles() {
        let p = RetryPolicy::standard(3);
        assert_eq!(
            (0..3).map(|i| p.delay(i)).collect::<Vec<_>>(),
            vec![Duration::from_secs(1), Duration::from_secs(2), Duration::from_secs(4)]
        );
    }

    #[test]
    fn retries_transient_failures_then_gives_up() {
        let mut sleeps = Vec::new();
        let mut calls = 0;
        let r: Result<(), _> = with_retries(&RetryPolicy::standard(3), |d| sleeps.push(d), || {
            calls += 1;
            Err(Attempt::Transient("down".into()))
        });
        assert!(matches!(r, Err(ProviderError::Transport(_))));
        assert_eq!(calls, 4);
        assert_eq!(sleeps.len(), 3);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let mut calls = 0;
        let r: Result<(), _> = with_retries(&RetryPolicy::standard(3), |_| {}, || {
            calls += 1;
            Err(Attempt::Fatal(ProviderError::MalformedResponse("x".into())))
        });
        assert!(r.is_err());
        assert_eq!(calls, 1);
    }

    #[test]
    fn live_chat_retries_5xx_and_parses_tool_call() {
        let ok = json!({
            "choices": [{
                "message": {
                    "content": "<formulation>{}</formulation>",
                    "tool_calls": [
                        {"function": {"name": "run_code", "arguments": "{\"code\":\"print(1)\"}"}},
                        {"function": {"name": "run_code", "arguments": "{\"code\":\"print(2)\"}"}}
                    ]
                },
                "finish_reason": "tool_calls"
            }]
        });
        let (url, server) = serve(vec![(503, "{}".into()), (200, ok.to_string())]);
        let chat = LiveChat::new(settings(url, 2));
        let req = ChatRequest::new("sys", "user").with_tools(vec![super::super::ToolSchema::run_code()]);
        let r = chat.complete(&req).unwrap();
        assert_eq!(r.finish_reason, FinishReason::ToolCall);
        assert_eq!(r.tool_call.unwrap().arguments, "{\"code\":\"print(1)\"}");
        let bodies = server.join().unwrap();
        assert_eq!(bodies.len(), 2);
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["messages"][0]["role"], "system");
        assert_eq!(sent["tools"][0]["function"]["name"], "run_code");
        assert_eq!(sent["temperature"], 0.0);
    }

    #[test]
    fn live_chat_does_not_retry_client_errors() {
        let (url, server) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
        let chat = LiveChat::new(settings(url, 3));
        let err = chat.complete(&ChatRequest::new("", "u")).unwrap_err();
        assert!(matches!(err, ProviderError::Transport(ref m) if m.contains("400")));
        assert_eq!(server.join().unwrap().len(), 1);
    }

    #[test]
    fn live_embedding_reads_first_vector() {
        let (url, server) = serve(vec![(200, json!({"data": [{"embedding": [3.0, 4.0]}]}).to_string())]);
        let e = LiveEmbedding::new(settings(url, 0));
        assert_eq!(e.embed_raw("a").unwrap(), vec![3.0, 4.0]);
        let sent: Value = serde_json::from_str(&server.join().unwrap()[0]).unwrap();
        assert_eq!(sent["input"], "a");
    }
}
