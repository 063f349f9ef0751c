//! Chat-completion backends.
//!
//! Every backend speaks the same request shape (system + user message,
//! temperature, max tokens) and reports token usage. The mock backend is a
//! pure function of its input; remote backends go through [`HttpBackend`],
//! which adds rate limiting and retries.

mod http;
mod limits;
mod mock;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::ChatMessages;

pub use http::HttpBackend;
pub use limits::{Backoff, Clock, RateLimiter, SystemClock, VirtualClock};
pub use mock::{mock_complete, MockBackend, MOCK_SPAM_KEYWORDS};

pub const MOCK_ENDPOINT: &str = "mock";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{backend}: authentication rejected (HTTP {status}): {message}")]
    Auth {
        backend: String,
        status: u16,
        message: String,
    },
    #[error("{backend}: environment variable {var} holding the API key is not set")]
    MissingApiKey { backend: String, var: String },
    #[error("{backend}: gave up after {attempts} attempts; last error: {last}")]
    ExhaustedRetries {
        backend: String,
        attempts: u32,
        last: String,
    },
    #[error("{backend}: malformed response: {detail}")]
    MalformedResponse { backend: String, detail: String },
    #[error("{backend}: request rejected (HTTP {status}): {body}")]
    Rejected {
        backend: String,
        status: u16,
        body: String,
    },
    #[error("invalid backend config `{backend}`: {reason}")]
    InvalidConfig { backend: String, reason: String },
}

impl BackendError {
    /// Errors that should stop a whole run rather than degrade one email.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            BackendError::Auth { .. }
                | BackendError::MissingApiKey { .. }
                | BackendError::InvalidConfig { .. }
        )
    }
}

fn default_temperature() -> f64 {
    0.0
}
fn default_max_completion_tokens() -> u32 {
    16
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    5
}
fn default_rate_limit() -> u32 {
    60
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

/// Connection and decoding settings for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub backend_id: String,
    /// Full chat-completions URL, or `mock`.
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_completion_tokens")]
    pub max_completion_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Requests per minute.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: u32,
    /// Empty means no Authorization header is sent.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

impl BackendConfig {
    pub fn mock(backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            endpoint_url: MOCK_ENDPOINT.to_string(),
            model_name: "mock-keyword-v1".to_string(),
            temperature: 0.0,
            max_completion_tokens: default_max_completion_tokens(),
            timeout_secs: default_timeout_secs(),
            max_retries: 0,
            rate_limit: 100_000,
            api_key_env: String::new(),
        }
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint_url == MOCK_ENDPOINT
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let fail = |reason: &str| {
            Err(BackendError::InvalidConfig {
                backend: self.backend_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.backend_id.is_empty() {
            return fail("backend_id is empty");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return fail("temperature must be a finite value >= 0");
        }
        if self.max_completion_tokens == 0 {
            return fail("max_completion_tokens must be positive");
        }
        if self.rate_limit == 0 {
            return fail("rate_limit must be at least 1 request/minute");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return fail("timeout_secs must be positive");
        }
        if !self.is_mock() && reqwest::Url::parse(&self.endpoint_url).is_err() {
            return fail("endpoint_url is neither `mock` nor a valid URL");
        }
        Ok(())
    }
}

/// What was sent on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: ChatMessages,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub backend_id: String,
    pub request: CompletionRequest,
    pub completion_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

pub trait ChatBackend: Send + Sync {
    fn config(&self) -> &BackendConfig;

    /// Sends one request. `max_tokens` overrides the configured completion
    /// limit for this call.
    fn complete_with_limit(
        &self,
        messages: &ChatMessages,
        max_tokens: u32,
    ) -> Result<ChatExchange, BackendError>;

    fn complete(&self, messages: &ChatMessages) -> Result<ChatExchange, BackendError> {
        self.complete_with_limit(messages, self.config().max_completion_tokens)
    }
}

impl fmt::Debug for dyn ChatBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChatBackend({})", self.config().backend_id)
    }
}

/// Builds the backend a config describes.
pub fn connect(cfg: BackendConfig) -> Result<Box<dyn ChatBackend>, BackendError> {
    cfg.validate()?;
    if cfg.is_mock() {
        Ok(Box::new(MockBackend::new(cfg)))
    } else {
        Ok(Box::new(HttpBackend::new(cfg)?))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub requests: u64,
    pub latency_ms: u64,
}

impl UsageTotals {
    pub fn add(&mut self, exchange: &ChatExchange) {
        self.prompt_tokens += exchange.prompt_tokens;
        self.completion_tokens += exchange.completion_tokens;
        self.requests += 1;
        self.latency_ms += exchange.latency_ms;
    }
}

pub fn usage_report<'a>(exchanges: impl IntoIterator<Item = &'a ChatExchange>) -> UsageTotals {
    let mut totals = UsageTotals::default();
    for e in exchanges {
        totals.add(e);
    }
    totals
}
