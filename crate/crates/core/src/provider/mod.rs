//! Chat-completion interface shared by every LLM call site.
//!
//! Every provider records each `complete` invocation (including failed and
//! retried attempts) in its [`CallLog`], in completion order.

mod http;
mod mock;

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{AnthropicProvider, HttpBackendConfig, OpenAiCompatProvider};
pub use mock::{FlakyProvider, MockDefault, MockProvider, MockReply, MockRule, MockScript};

/// Upper bound of the temperature band the harness treats as normal.
pub const MAX_POLICY_TEMPERATURE: f64 = 0.3;
pub const DEFAULT_MAX_OUTPUT_CHARS: usize = 8000;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderError {
    #[error("provider unavailable: {message}")]
    Unavailable { message: String },
    #[error("provider timed out after {deadline_ms} ms")]
    Timeout { deadline_ms: u64 },
    #[error("provider rate limited (retry after {retry_after_ms:?} ms)")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("invalid request: {message}")]
    InvalidRequest { message: String },
}

impl ProviderError {
    pub fn unavailable(message: impl Into<String>) -> Self {
        Self::Unavailable {
            message: message.into(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        !matches!(self, Self::InvalidRequest { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_chars: usize,
    #[serde(default)]
    pub tag: String,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature: 0.0,
            max_output_chars: DEFAULT_MAX_OUTPUT_CHARS,
            tag: String::new(),
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::InvalidRequest {
                message: "request has no messages".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest {
                message: format!("temperature {} outside [0, 1]", self.temperature),
            });
        }
        if self.max_output_chars == 0 {
            return Err(ProviderError::InvalidRequest {
                message: "max_output_chars must be positive".into(),
            });
        }
        if self.temperature > MAX_POLICY_TEMPERATURE {
            log::warn!(
                "request {:?} uses temperature {} above the {} policy band",
                self.tag,
                self.temperature,
                MAX_POLICY_TEMPERATURE
            );
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// All message contents joined by newlines; the text mock rules match against.
    pub fn concatenated(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub model_id: String,
    pub latency_ms: f64,
    pub truncated: bool,
}

/// Cuts `content` to at most `max_chars` characters.
pub(crate) fn clip_output(content: String, max_chars: usize) -> (String, bool) {
    match content.char_indices().nth(max_chars) {
        Some((byte_idx, _)) => (content[..byte_idx].to_string(), true),
        None => (content, false),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub request: ChatRequest,
    pub outcome: Result<ChatResponse, ProviderError>,
    pub latency_ms: f64,
}

#[derive(Debug, Default)]
pub struct CallLog {
    records: Mutex<Vec<CallRecord>>,
}

impl CallLog {
    pub fn push(&self, record: CallRecord) {
        self.records.lock().expect("call log poisoned").push(record);
    }

    pub fn snapshot(&self) -> Vec<CallRecord> {
        self.records.lock().expect("call log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("call log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Times `call`, records the outcome and passes it through.
    pub fn record<F>(&self, request: &ChatRequest, call: F) -> Result<ChatResponse, ProviderError>
    where
        F: FnOnce() -> Result<ChatResponse, ProviderError>,
    {
        let started = Instant::now();
        let outcome = call();
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        self.push(CallRecord {
            request: request.clone(),
            outcome: outcome.clone(),
            latency_ms,
        });
        outcome
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    fn call_log(&self) -> &CallLog;

    fn name(&self) -> &str {
        "provider"
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }

    fn call_log(&self) -> &CallLog {
        (**self).call_log()
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }

    fn call_log(&self) -> &CallLog {
        (**self).call_log()
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "duration_ms")]
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_backoff: Duration::ZERO,
        }
    }

    /// Delay before the retry that follows failed attempt `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.base_backoff
            .saturating_mul(2u32.saturating_pow(attempt.min(16)))
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Calls the provider, retrying timeouts, rate limits and unavailability with
/// exponential backoff. The last error is returned once attempts run out.
pub fn complete_with_retry(
    provider: &dyn ChatProvider,
    request: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<ChatResponse, ProviderError> {
    if policy.max_attempts == 0 {
        return Err(ProviderError::InvalidRequest {
            message: "retry policy needs at least one attempt".into(),
        });
    }
    let mut attempt = 0;
    loop {
        match provider.complete(request) {
            Ok(response) => return Ok(response),
            Err(err) if err.is_retryable() && attempt + 1 < policy.max_attempts => {
                let mut delay = policy.backoff(attempt);
                if let ProviderError::RateLimited {
                    retry_after_ms: Some(ms),
                } = err
                {
                    delay = delay.max(Duration::from_millis(ms));
                }
                log::debug!(
                    "attempt {} for {:?} failed ({err}); retrying in {:?}",
                    attempt + 1,
                    request.tag,
                    delay
                );
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                attempt += 1;
            }
            Err(err) => return Err(err),
        }
    }
}
