//! OpenAI-compatible HTTP adapter.
//!
//! Completion style: `POST {endpoint}` with
//! `{"model","prompt","temperature","max_tokens","n":1,"stop"}` and a reply of
//! `{"choices":[{"text","finish_reason"}],"usage":{...}}`.
//!
//! Chat style sends the whole rendered prompt as one user message,
//! `{"model","messages":[{"role":"user","content":...}],...}`, and reads
//! `choices[0].message.content`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{Backend, BackendError, BackendRequest, FinishReason, RawCompletion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ApiStyle {
    #[default]
    Completions,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub style: ApiStyle,
    /// Sent as `Authorization: Bearer <key>`; never serialized.
    #[serde(skip)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

pub struct HttpBackend {
    id: String,
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Fatal(format!("http client: {e}")))?;
        Ok(Self { id: format!("http:{}", config.model), config, client })
    }

    fn body(&self, request: &BackendRequest<'_>) -> Value {
        let p = request.params;
        let mut body = json!({
            "model": self.config.model,
            "temperature": p.temperature,
            "max_tokens": p.max_tokens,
            "n": 1,
        });
        // Most OpenAI-style servers cap stop lists at four entries.
        let stops: Vec<&String> = request.prompt.stop_sequences.iter().take(4).collect();
        if !stops.is_empty() {
            body["stop"] = json!(stops);
        }
        if let Some(seed) = p.seed {
            body["seed"] = json!(seed.wrapping_add(request.sample_index as u64));
        }
        match self.config.style {
            ApiStyle::Completions => body["prompt"] = json!(request.prompt.text),
            ApiStyle::Chat => {
                body["messages"] = json!([{"role": "user", "content": request.prompt.text}])
            }
        }
        body
    }
}

fn parse_finish(v: Option<&Value>) -> FinishReason {
    match v.and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Stop,
    }
}

/// Extract the completion from a response body.
pub fn parse_response(style: ApiStyle, body: &Value) -> Result<RawCompletion, BackendError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Fatal("response has no choices".into()))?;
    let text = match style {
        ApiStyle::Completions => choice.get("text"),
        ApiStyle::Chat => choice.get("message").and_then(|m| m.get("content")),
    }
    .and_then(Value::as_str)
    .ok_or_else(|| BackendError::Fatal("response choice has no text".into()))?;
    let usage = body.get("usage");
    let count = |k: &str| usage.and_then(|u| u.get(k)).and_then(Value::as_u64);
    Ok(RawCompletion {
        text: text.to_string(),
        finish_reason: parse_finish(choice.get("finish_reason")),
        prompt_tokens: count("prompt_tokens"),
        completion_tokens: count("completion_tokens"),
    })
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &BackendRequest<'_>) -> Result<RawCompletion, BackendError> {
        let mut req = self.client.post(&self.config.endpoint).json(&self.body(request));
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(BackendError::Auth(format!("status {status}")));
        }
        if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Fatal(format!("status {status}: {text}")));
        }
        let body: Value = resp
            .json()
            .map_err(|e| BackendError::Transient(format!("bad response body: {e}")))?;
        parse_response(self.config.style, &body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_styles() {
        let c = json!({"choices":[{"text":" neutral","finish_reason":"stop"}],"usage":{"prompt_tokens":12,"completion_tokens":1}});
        let r = parse_response(ApiStyle::Completions, &c).unwrap();
        assert_eq!(r.text, " neutral");
        assert_eq!(r.prompt_tokens, Some(12));

        let chat = json!({"choices":[{"message":{"role":"assistant","content":"entailment"},"finish_reason":"length"}]});
        let r = parse_response(ApiStyle::Chat, &chat).unwrap();
        assert_eq!(r.text, "entailment");
        assert_eq!(r.finish_reason, FinishReason::Length);
        assert_eq!(r.completion_tokens, None);

        assert!(parse_response(ApiStyle::Chat, &json!({"choices":[]})).is_err());
    }
}
