//! Thin adapters for vendor chat-completion HTTP APIs.
//!
//! The blocking client is built lazily on first use so that a provider can be
//! constructed from inside an async runtime and used from blocking worker threads.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{clip_output, CallLog, ChatProvider, ChatRequest, ChatResponse, ProviderError, Role};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpBackendConfig {
    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

fn build_client(config: &HttpBackendConfig) -> Result<Client, ProviderError> {
    Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| ProviderError::unavailable(format!("cannot build HTTP client: {e}")))
}

// Rough budget: providers count tokens, requests count characters.
fn token_budget(max_output_chars: usize) -> usize {
    (max_output_chars / 2).max(16)
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

fn send(
    config: &HttpBackendConfig,
    builder: reqwest::blocking::RequestBuilder,
) -> Result<Value, ProviderError> {
    let response = builder.send().map_err(|e| {
        if e.is_timeout() {
            ProviderError::Timeout {
                deadline_ms: config.timeout.as_millis() as u64,
            }
        } else {
            ProviderError::unavailable(e.to_string())
        }
    })?;
    let status = response.status();
    if !status.is_success() {
        let retry_after_ms = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .map(|secs| (secs * 1000.0) as u64);
        let body = response.text().unwrap_or_default();
        return Err(status_error(status, retry_after_ms, &body, config));
    }
    response
        .json::<Value>()
        .map_err(|e| ProviderError::unavailable(format!("undecodable response body: {e}")))
}

fn status_error(
    status: StatusCode,
    retry_after_ms: Option<u64>,
    body: &str,
    config: &HttpBackendConfig,
) -> ProviderError {
    match status {
        StatusCode::TOO_MANY_REQUESTS => ProviderError::RateLimited { retry_after_ms },
        StatusCode::REQUEST_TIMEOUT | StatusCode::GATEWAY_TIMEOUT => ProviderError::Timeout {
            deadline_ms: config.timeout.as_millis() as u64,
        },
        s if s.is_server_error() => ProviderError::unavailable(format!("HTTP {s}: {body}")),
        s => ProviderError::InvalidRequest {
            message: format!("HTTP {s}: {body}"),
        },
    }
}

/// OpenAI-style `/chat/completions` endpoint (also served by Gemini's and many
/// self-hosted gateways' compatibility layers).
#[derive(Debug)]
pub struct OpenAiCompatProvider {
    config: HttpBackendConfig,
    client: OnceLock<Client>,
    log: CallLog,
}

impl OpenAiCompatProvider {
    pub fn new(config: HttpBackendConfig) -> Self {
        Self {
            config,
            client: OnceLock::new(),
            log: CallLog::default(),
        }
    }

    pub fn request_body(request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": role_name(m.role), "content": m.content}))
            .collect();
        json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": token_budget(request.max_output_chars),
        })
    }

    /// Returns the assistant text and whether the backend stopped on length.
    pub fn parse_response(body: &Value) -> Result<(String, bool), ProviderError> {
        let choice = body
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| ProviderError::unavailable("response has no choices"))?;
        let content = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let truncated = choice.get("finish_reason").and_then(Value::as_str) == Some("length");
        Ok((content, truncated))
    }

    fn call(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let client = match self.client.get() {
            Some(c) => c,
            None => {
                let built = build_client(&self.config)?;
                self.client.get_or_init(|| built)
            }
        };
        let mut builder = client
            .post(self.config.endpoint("chat/completions"))
            .json(&Self::request_body(request));
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let started = Instant::now();
        let body = send(&self.config, builder)?;
        let (content, stopped_on_length) = Self::parse_response(&body)?;
        let (content, clipped) = clip_output(content, request.max_output_chars);
        Ok(ChatResponse {
            content,
            model_id: request.model_id.clone(),
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
            truncated: stopped_on_length || clipped,
        })
    }
}

impl ChatProvider for OpenAiCompatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.log.record(request, || self.call(request))
    }

    fn call_log(&self) -> &CallLog {
        &self.log
    }

    fn name(&self) -> &str {
        "openai"
    }
}

pub const ANTHROPIC_VERSION: &str = "2023-06-01";

/// Anthropic `/v1/messages` endpoint.
#[derive(Debug)]
pub struct AnthropicProvider {
    config: HttpBackendConfig,
    client: OnceLock<Client>,
    log: CallLog,
}

impl AnthropicProvider {
    pub fn new(config: HttpBackendConfig) -> Self {
        Self {
            config,
            client: OnceLock::new(),
            log: CallLog::default(),
        }
    }

    /// System messages are lifted into the top-level `system` field.
    pub fn request_body(request: &ChatRequest) -> Value {
        let system: Vec<&str> = request
            .messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .collect();
        let messages: Vec<Value> = request
            .messages
            .iter()
            .filter(|m| m.role != Role::System)
            .map(|m| json!({"role": role_name(m.role), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": token_budget(request.max_output_chars),
        });
        if !system.is_empty() {
            body["system"] = Value::String(system.join("\n\n"));
        }
        body
    }

    pub fn parse_response(body: &Value) -> Result<(String, bool), ProviderError> {
        let blocks = body
            .get("content")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::unavailable("response has no content blocks"))?;
        let content: String = blocks
            .iter()
            .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
            .filter_map(|b| b.get("text").and_then(Value::as_str))
            .collect();
        let truncated = body.get("stop_reason").and_then(Value::as_str) == Some("max_tokens");
        Ok((content, truncated))
    }

    fn call(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let client = match self.client.get() {
            Some(c) => c,
            None => {
                let built = build_client(&self.config)?;
                self.client.get_or_init(|| built)
            }
        };
        let mut builder = client
            .post(self.config.endpoint("v1/messages"))
            .header("anthropic-version", ANTHROPIC_VERSION)
            .json(&Self::request_body(request));
        if let Some(key) = &self.config.api_key {
            builder = builder.header("x-api-key", key);
        }
        let started = Instant::now();
        let body = send(&self.config, builder)?;
        let (content, stopped_on_length) = Self::parse_response(&body)?;
        let (content, clipped) = clip_output(content, request.max_output_chars);
        Ok(ChatResponse {
            content,
            model_id: request.model_id.clone(),
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
            truncated: stopped_on_length || clipped,
        })
    }
}

impl ChatProvider for AnthropicProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.log.record(request, || self.call(request))
    }

    fn call_log(&self) -> &CallLog {
        &self.log
    }

    fn name(&self) -> &str {
        "anthropic"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::ChatMessage;

    fn request() -> ChatRequest {
        ChatRequest::new(
            "model-x",
            vec![ChatMessage::system("be brief"), ChatMessage::user("hello")],
        )
        .with_temperature(0.2)
    }

    #[test]
    fn openai_wire_format() {
        let body = OpenAiCompatProvider::request_body(&request());
        assert_eq!(body["model"], "model-x");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "hello");
        assert_eq!(body["temperature"], 0.2);

        let reply = json!({"choices":[{"message":{"role":"assistant","content":"Hallo"},"finish_reason":"stop"}]});
        assert_eq!(
            OpenAiCompatProvider::parse_response(&reply).unwrap(),
            ("Hallo".to_string(), false)
        );
        let cut = json!({"choices":[{"message":{"content":"Hal"},"finish_reason":"length"}]});
        assert!(OpenAiCompatProvider::parse_response(&cut).unwrap().1);
        assert!(OpenAiCompatProvider::parse_response(&json!({})).is_err());
    }

    #[test]
    fn anthropic_wire_format() {
        let body = AnthropicProvider::request_body(&request());
        assert_eq!(body["system"], "be brief");
        assert_eq!(body["messages"].as_array().unwrap().len(), 1);
        assert_eq!(body["messages"][0]["role"], "user");

        let reply = json!({"content":[{"type":"text","text":"Hal"},{"type":"text","text":"lo"}],"stop_reason":"end_turn"});
        assert_eq!(
            AnthropicProvider::parse_response(&reply).unwrap(),
            ("Hallo".to_string(), false)
        );
    }

    #[test]
    fn status_mapping() {
        let cfg = HttpBackendConfig {
            base_url: "http://x".into(),
            api_key: None,
            timeout: Duration::from_millis(1500),
        };
        assert_eq!(
            status_error(StatusCode::TOO_MANY_REQUESTS, Some(2000), "", &cfg),
            ProviderError::RateLimited {
                retry_after_ms: Some(2000)
            }
        );
        assert_eq!(
            status_error(StatusCode::GATEWAY_TIMEOUT, None, "", &cfg),
            ProviderError::Timeout { deadline_ms: 1500 }
        );
        assert!(matches!(
            status_error(StatusCode::BAD_GATEWAY, None, "", &cfg),
            ProviderError::Unavailable { .. }
        ));
        assert!(!status_error(StatusCode::UNAUTHORIZED, None, "", &cfg).is_retryable());
    }

    #[test]
    fn unreachable_backend_is_unavailable() {
        let provider = OpenAiCompatProvider::new(HttpBackendConfig {
            base_url: "http://127.0.0.1:9".into(),
            api_key: Some("k".into()),
            timeout: Duration::from_millis(500),
        });
        let err = provider.complete(&request()).unwrap_err();
        assert!(err.is_retryable());
        assert_eq!(provider.call_log().len(), 1);
    }
}
