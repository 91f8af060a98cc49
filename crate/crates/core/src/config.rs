//! TOML configuration for providers and the workbench server.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentConfig;
use crate::provider::{
    AnthropicProvider, ChatProvider, HttpBackendConfig, MockProvider, MockScript,
    OpenAiCompatProvider, RetryPolicy, MAX_POLICY_TEMPERATURE,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid mock script {path}: {source}")]
    MockScript {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Openai,
    Anthropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default = "default_model")]
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub base_backoff_ms: u64,
    /// JSON mock script, for `kind = "mock"`. Without one the mock echoes.
    #[serde(default)]
    pub mock_script: Option<PathBuf>,
}

fn default_model() -> String {
    "mock-model".into()
}

fn default_timeout_ms() -> u64 {
    120_000
}

fn default_max_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            model_id: default_model(),
            api_key_env: None,
            base_url: None,
            temperature: 0.0,
            timeout_ms: default_timeout_ms(),
            max_attempts: default_max_attempts(),
            base_backoff_ms: default_backoff_ms(),
            mock_script: None,
        }
    }
}

impl ProviderConfig {
    /// Agent settings carrying this provider's model, temperature and retries.
    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            retry: self.retry_policy(),
            ..AgentConfig::default()
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts.max(1),
            base_backoff: Duration::from_millis(self.base_backoff_ms),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(ConfigError::Invalid(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.temperature > MAX_POLICY_TEMPERATURE {
            log::warn!(
                "configured temperature {} exceeds the {} policy band",
                self.temperature,
                MAX_POLICY_TEMPERATURE
            );
        }
        if self.max_attempts == 0 {
            return Err(ConfigError::Invalid("max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    /// Resolves paths relative to the config file's directory.
    fn rebase(&mut self, base: &Path) {
        if let Some(script) = &self.mock_script {
            if script.is_relative() {
                self.mock_script = Some(base.join(script));
            }
        }
    }

    pub fn build(&self) -> Result<Arc<dyn ChatProvider>, ConfigError> {
        self.validate()?;
        let api_key = match &self.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| ConfigError::MissingApiKey(var.clone()))?,
            ),
            None => None,
        };
        let http = |default_url: &str| HttpBackendConfig {
            base_url: self
                .base_url
                .clone()
                .unwrap_or_else(|| default_url.to_string()),
            api_key: api_key.clone(),
            timeout: Duration::from_millis(self.timeout_ms),
        };
        Ok(match self.kind {
            ProviderKind::Mock => {
                let script = match &self.mock_script {
                    Some(path) => load_mock_script(path)?,
                    None => MockScript::echo(),
                };
                Arc::new(MockProvider::new(script))
            }
            ProviderKind::Openai => {
                Arc::new(OpenAiCompatProvider::new(http("https://api.openai.com/v1")))
            }
            ProviderKind::Anthropic => {
                Arc::new(AnthropicProvider::new(http("https://api.anthropic.com")))
            }
        })
    }
}

pub fn load_mock_script(path: &Path) -> Result<MockScript, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::MockScript {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    /// TM store file; in-memory when absent.
    #[serde(default)]
    pub tm_path: Option<PathBuf>,
    /// Directory of per-session event logs; in-memory when absent.
    #[serde(default)]
    pub session_dir: Option<PathBuf>,
    /// Static UI bundle served under `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    /// Overrides for the shipped prompt templates.
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: default_bind(),
            tm_path: None,
            session_dir: None,
            static_dir: None,
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub server: ServerConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.provider.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.provider.rebase(base);
        for p in [
            &mut config.server.tm_path,
            &mut config.server.session_dir,
            &mut config.server.static_dir,
            &mut config.server.templates_dir,
        ] {
            if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
                *p = Some(base.join(rel));
            }
        }
        Ok(config)
    }
}
