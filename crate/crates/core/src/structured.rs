//! Strict structured-output parsing with a single repair round-trip.

use serde_json::{Map, Value};

use crate::providers::{ChatClient, ChatRequest, ProviderError};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum RepairError<E> {
    Provider(ProviderError),
    /// Both the original answer and the repaired answer failed to parse;
    /// carries the error of the second attempt.
    Invalid(E),
}

/// Sends `request`; if `parse` rejects the answer, re-asks once with the
/// parse error appended to the user text.
pub(crate) fn ask_with_repair<T, E: std::fmt::Display>(
    client: &ChatClient,
    request: &ChatRequest,
    parse: impl Fn(&str) -> Result<T, E>,
) -> Result<T, RepairError<E>> {
    let first = client.chat_complete(request).map_err(RepairError::Provider)?;
    let error = match parse(&first.text) {
        Ok(v) => return Ok(v),
        Err(e) => e,
    };
    log::debug!("structured output rejected, asking for repair: {error}");
    let mut repair = request.clone();
    repair.user_text = format!(
        "{}\n\nYour previous output was rejected: {error}\nReturn only output that satisfies the required format.",
        request.user_text
    );
    let second = client.chat_complete(&repair).map_err(RepairError::Provider)?;
    parse(&second.text).map_err(RepairError::Invalid)
}

/// Removes one surrounding markdown code fence, if the whole text is fenced.
pub(crate) fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        if let Some(body) = rest.strip_suffix("```") {
            // Drop the info string (e.g. `json`) on the opening line.
            return match body.find('\n') {
                Some(nl) => body[nl + 1..].trim_end(),
                None => body,
            };
        }
    }
    trimmed
}

/// Parses a JSON object, rejecting every other JSON value.
pub(crate) fn parse_json_object(text: &str) -> Result<Map<String, Value>, String> {
    match serde_json::from_str::<Value>(strip_code_fence(text)) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err("expected a JSON object".into()),
        Err(e) => Err(format!("not valid JSON: {e}")),
    }
}

pub(crate) fn reject_extra_keys(map: &Map<String, Value>, allowed: &[&str]) -> Result<(), String> {
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(format!("unexpected key `{k}`")),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_fences_with_info_string() {
        assert_eq!(strip_code_fence("```json\n{\"a\":1}\n```"), "{\"a\":1}");
        assert_eq!(strip_code_fence("  {\"a\":1} "), "{\"a\":1}");
    }

    #[test]
    fn json_object_only() {
        assert!(parse_json_object("[1]").is_err());
        assert!(parse_json_object("hello").is_err());
        assert_eq!(parse_json_object("{\"a\":1}").unwrap()["a"], 1);
    }
}
