//! Chat-completions over HTTP.
//!
//! Request: `POST {model, messages: [{role, content}], temperature, max_tokens}`.
//! Response: `choices[0].message.content` plus `usage.{prompt_tokens,completion_tokens}`.

use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::limits::{Backoff, Clock, RateLimiter, SystemClock};
use super::{BackendConfig, BackendError, ChatBackend, ChatExchange, CompletionRequest};
use crate::prompt::{ChatMessage, ChatMessages};

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(String, u64, u64),
    Retry(String),
    Fail(BackendError),
}

pub struct HttpBackend {
    cfg: BackendConfig,
    client: Client,
    api_key: Option<String>,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    backoff: Backoff,
    rng: Mutex<ChaCha8Rng>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("backend_id", &self.cfg.backend_id)
            .field("endpoint_url", &self.cfg.endpoint_url)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        Self::with_parts(cfg, Arc::new(SystemClock::new()), Backoff::default())
    }

    /// Full control over timing, for tests and tuning.
    pub fn with_parts(
        cfg: BackendConfig,
        clock: Arc<dyn Clock>,
        backoff: Backoff,
    ) -> Result<Self, BackendError> {
        cfg.validate()?;
        let api_key = if cfg.api_key_env.is_empty() {
            None
        } else {
            match std::env::var(&cfg.api_key_env) {
                Ok(key) if !key.is_empty() => Some(key),
                _ => {
                    return Err(BackendError::MissingApiKey {
                        backend: cfg.backend_id.clone(),
                        var: cfg.api_key_env.clone(),
                    })
                }
            }
        };
        let client = Client::builder()
            .timeout(cfg.timeout())
            .build()
            .map_err(|e| BackendError::InvalidConfig {
                backend: cfg.backend_id.clone(),
                reason: e.to_string(),
            })?;
        Ok(Self {
            limiter: RateLimiter::new(cfg.rate_limit),
            rng: Mutex::new(ChaCha8Rng::from_os_rng()),
            cfg,
            client,
            api_key,
            clock,
            backoff,
        })
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Attempt {
        let mut req = self.client.post(&self.cfg.endpoint_url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            // timeouts, refused connections and the like are transient
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Attempt::Fail(BackendError::Auth {
                backend: self.cfg.backend_id.clone(),
                status: status.as_u16(),
                message: snippet(&text),
            });
        }
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Attempt::Retry(format!("HTTP {}: {}", status.as_u16(), snippet(&text)));
        }
        if !status.is_success() {
            return Attempt::Fail(BackendError::Rejected {
                backend: self.cfg.backend_id.clone(),
                status: status.as_u16(),
                body: snippet(&text),
            });
        }
        match parse_response(&text) {
            Ok((content, prompt, completion)) => Attempt::Done(content, prompt, completion),
            Err(detail) => Attempt::Fail(BackendError::MalformedResponse {
                backend: self.cfg.backend_id.clone(),
                detail,
            }),
        }
    }
}

fn parse_response(text: &str) -> Result<(String, u64, u64), String> {
    let wire: WireResponse = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let first = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| "response has no choices".to_string())?;
    let content = first
        .message
        .content
        .ok_or_else(|| "choices[0].message.content is missing".to_string())?;
    let usage = wire.usage.unwrap_or_default();
    Ok((content, usage.prompt_tokens, usage.completion_tokens))
}

fn snippet(text: &str) -> String {
    const MAX: usize = 300;
    if text.chars().count() <= MAX {
        text.to_string()
    } else {
        let cut: String = text.chars().take(MAX).collect();
        format!("{cut}…")
    }
}

impl ChatBackend for HttpBackend {
    fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn complete_with_limit(
        &self,
        messages: &ChatMessages,
        max_tokens: u32,
    ) -> Result<ChatExchange, BackendError> {
        let body = WireRequest {
            model: &self.cfg.model_name,
            messages: messages.as_slice(),
            temperature: self.cfg.temperature,
            max_tokens,
        };
        let started = Instant::now();
        let mut attempts = 0u32;
        loop {
            self.limiter.acquire(self.clock.as_ref());
            attempts += 1;
            let last = match self.attempt(&body) {
                Attempt::Done(completion_text, prompt_tokens, completion_tokens) => {
                    return Ok(ChatExchange {
                        backend_id: self.cfg.backend_id.clone(),
                        request: CompletionRequest {
                            model: self.cfg.model_name.clone(),
                            messages: messages.clone(),
                            temperature: self.cfg.temperature,
                            max_tokens,
                        },
                        completion_text,
                        prompt_tokens,
                        completion_tokens,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempts,
                    })
                }
                Attempt::Fail(err) => return Err(err),
                Attempt::Retry(last) => last,
            };
            if attempts > self.cfg.max_retries {
                return Err(BackendError::ExhaustedRetries {
                    backend: self.cfg.backend_id.clone(),
                    attempts,
                    last,
                });
            }
            let delay = self
                .backoff
                .delay(attempts - 1, &mut *self.rng.lock().unwrap());
            self.clock.sleep(delay);
        }
    }
}
