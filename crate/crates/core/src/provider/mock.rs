use std::sync::atomic::{AtomicU32, Ordering};

use serde::{Deserialize, Serialize};

use super::{clip_output, CallLog, ChatProvider, ChatRequest, ChatResponse, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockReply {
    Text(String),
    Error(ProviderError),
}

/// One scripted rule. `pattern` is searched in the concatenated request messages
/// and in the request tag; when `tag` is set the request tag must also contain it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    #[serde(default)]
    pub tag: Option<String>,
    pub reply: MockReply,
}

impl MockRule {
    pub fn text(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            tag: None,
            reply: MockReply::Text(response.into()),
        }
    }

    pub fn error(pattern: impl Into<String>, error: ProviderError) -> Self {
        Self {
            pattern: pattern.into(),
            tag: None,
            reply: MockReply::Error(error),
        }
    }

    pub fn for_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    fn matches(&self, request: &ChatRequest, haystack: &str) -> bool {
        let tag_ok = self
            .tag
            .as_ref()
            .is_none_or(|t| request.tag.contains(t.as_str()));
        tag_ok && (haystack.contains(&self.pattern) || request.tag.contains(&self.pattern))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockDefault {
    Error,
    #[default]
    Echo,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_mode: MockDefault,
}

impl MockScript {
    pub fn echo() -> Self {
        Self {
            rules: Vec::new(),
            default_mode: MockDefault::Echo,
        }
    }

    pub fn failing() -> Self {
        Self {
            rules: Vec::new(),
            default_mode: MockDefault::Error,
        }
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// The reply for `request`; rules are tried in order and the first match wins.
    pub fn reply_for(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let haystack = request.concatenated();
        if let Some(rule) = self.rules.iter().find(|r| r.matches(request, &haystack)) {
            return match &rule.reply {
                MockReply::Text(text) => Ok(text.clone()),
                MockReply::Error(err) => Err(err.clone()),
            };
        }
        match self.default_mode {
            MockDefault::Echo => Ok(format!(
                "ECHO[{}]",
                request.last_user_message().unwrap_or_default()
            )),
            MockDefault::Error => Err(ProviderError::unavailable(format!(
                "no mock rule matched request {:?}",
                request.tag
            ))),
        }
    }
}

/// Offline provider whose output is a pure function of its script and the request.
#[derive(Debug, Default)]
pub struct MockProvider {
    script: MockScript,
    log: CallLog,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            log: CallLog::default(),
        }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.log.record(request, || {
            request.validate()?;
            let content = self.script.reply_for(request)?;
            let (content, truncated) = clip_output(content, request.max_output_chars);
            Ok(ChatResponse {
                content,
                model_id: request.model_id.clone(),
                latency_ms: 0.0,
                truncated,
            })
        })
    }

    fn call_log(&self) -> &CallLog {
        &self.log
    }

    fn name(&self) -> &str {
        "mock"
    }
}

/// Fails the first `failures` calls with `error`, then delegates to `inner`.
#[derive(Debug)]
pub struct FlakyProvider<P> {
    inner: P,
    remaining: AtomicU32,
    error: ProviderError,
    log: CallLog,
}

impl<P: ChatProvider> FlakyProvider<P> {
    pub fn new(inner: P, failures: u32, error: ProviderError) -> Self {
        Self {
            inner,
            remaining: AtomicU32::new(failures),
            error,
            log: CallLog::default(),
        }
    }
}

impl<P: ChatProvider> ChatProvider for FlakyProvider<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.log.record(request, || {
            let fail = self
                .remaining
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok();
            if fail {
                Err(self.error.clone())
            } else {
                self.inner.complete(request)
            }
        })
    }

    fn call_log(&self) -> &CallLog {
        &self.log
    }

    fn name(&self) -> &str {
        "flaky"
    }
}
