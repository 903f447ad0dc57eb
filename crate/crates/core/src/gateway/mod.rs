//! The single boundary to language-model backends.
//!
//! [`Gateway`] wraps a [`ModelBackend`] with retries, exponential backoff,
//! an optional in-flight limit and an append-only call log. Two backends
//! ship: [`HttpBackend`] for chat-completions style APIs and
//! [`MockBackend`], a scripted deterministic stand-in.

mod http;
mod json;
mod mock;
mod template;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use http::HttpBackend;
pub use json::{extract_json, extract_json_objects};
pub use mock::{MockBackend, MockEntry, MockReply, MockScript};
pub use template::{render, Placeholder, PromptTemplate, TemplateName};

pub const ENV_API_BASE: &str = "RULEKIT_API_BASE";
pub const ENV_API_KEY: &str = "RULEKIT_API_KEY";
pub const ENV_MODEL: &str = "RULEKIT_MODEL";

#[derive(Debug, Clone, thiserror::Error)]
pub enum GatewayError {
    #[error("gateway error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("malformed model output ({reason})")]
    MalformedModelOutput { reason: String, text: String },
    #[error("unbound placeholder {0}")]
    UnboundPlaceholder(String),
    #[error("invalid gateway config: {0}")]
    Config(String),
    #[error("backend rejected request: {0}")]
    Backend(String),
}

impl GatewayError {
    pub fn malformed(reason: impl Into<String>, text: impl Into<String>) -> Self {
        GatewayError::MalformedModelOutput {
            reason: reason.into(),
            text: text.into(),
        }
    }
}

/// Failure of a single backend attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Retryable: connection reset, 5xx, rate limit.
    Transport(String),
    Timeout,
    Auth(String),
    /// Not retryable: bad request, missing script entry.
    Fatal(String),
}

pub trait ModelBackend: Send + Sync {
    fn send(&self, prompt: &str, config: &GatewayConfig) -> Result<String, BackendError>;
}

impl<F> ModelBackend for F
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    fn send(&self, prompt: &str, _config: &GatewayConfig) -> Result<String, BackendError> {
        self(prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    /// API base, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub temperature: f64,
    /// First backoff delay; doubled on each further retry.
    pub backoff_ms: u64,
    pub max_in_flight: Option<usize>,
    pub embedding_model: Option<String>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: ENV_API_KEY.to_string(),
            timeout_secs: 60.0,
            max_retries: 3,
            temperature: 0.0,
            backoff_ms: 500,
            max_in_flight: None,
            embedding_model: None,
        }
    }
}

impl GatewayConfig {
    /// Defaults overridden by `RULEKIT_API_BASE` and `RULEKIT_MODEL`.
    pub fn from_env() -> Self {
        let mut c = GatewayConfig::default();
        if let Ok(base) = std::env::var(ENV_API_BASE) {
            c.endpoint = base;
        }
        if let Ok(model) = std::env::var(ENV_MODEL) {
            c.model = model;
        }
        c
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(GatewayError::Config(format!(
                "timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::Config(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        if self.max_in_flight == Some(0) {
            return Err(GatewayError::Config(
                "max_in_flight must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
    }
}

/// One gateway call, as appended to the call log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub template: String,
    pub prompt_hash: String,
    pub response: String,
    pub latency_ms: u64,
    pub attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

struct InFlight {
    limit: usize,
    current: Mutex<usize>,
    cv: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.current.lock().unwrap();
        while *n >= self.limit {
            n = self.cv.wait(n).unwrap();
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.current.lock().unwrap() -= 1;
        self.0.cv.notify_one();
    }
}

#[derive(Default)]
struct CallLog {
    records: Vec<CallRecord>,
    sink: Option<File>,
}

/// Shared handle to a model backend. Safe for concurrent use.
pub struct Gateway {
    backend: Arc<dyn ModelBackend>,
    config: GatewayConfig,
    limiter: Option<InFlight>,
    log: Mutex<CallLog>,
}

impl Gateway {
    pub fn new(
        backend: Arc<dyn ModelBackend>,
        config: GatewayConfig,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Gateway {
            backend,
            limiter: config.max_in_flight.map(|limit| InFlight {
                limit,
                current: Mutex::new(0),
                cv: Condvar::new(),
            }),
            config,
            log: Mutex::new(CallLog::default()),
        })
    }

    /// Gateway over a scripted mock with no backoff delay.
    pub fn mock(script: MockScript) -> Self {
        let config = GatewayConfig {
            backoff_ms: 0,
            ..GatewayConfig::default()
        };
        Gateway::new(Arc::new(MockBackend::new(script)), config).expect("default config is valid")
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Additionally appends every call record to `path` as JSON lines.
    pub fn with_call_log_file(self, path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.log.lock().unwrap().sink = Some(file);
        Ok(self)
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap().records.clone()
    }

    fn record(&self, rec: CallRecord) {
        let mut log = self.log.lock().unwrap();
        if let Some(sink) = log.sink.as_mut() {
            let line = serde_json::to_string(&rec).expect("call record serializes");
            if let Err(e) = writeln!(sink, "{line}") {
                log::warn!("call log write failed: {e}");
            }
        }
        log.records.push(rec);
    }

    /// Sends a prompt, retrying transport failures and timeouts up to
    /// `max_retries` times with exponential backoff.
    pub fn complete(&self, template: &str, prompt: &str) -> Result<String, GatewayError> {
        let _slot = self.limiter.as_ref().map(InFlight::acquire);
        let started = Instant::now();
        let mut attempts = 0u32;
        let outcome = loop {
            attempts += 1;
            match self.backend.send(prompt, &self.config) {
                Ok(text) => break Ok(text),
                Err(BackendError::Auth(m)) => break Err(GatewayError::Auth(m)),
                Err(BackendError::Fatal(m)) => break Err(GatewayError::Backend(m)),
                Err(retryable) => {
                    if attempts > self.config.max_retries {
                        break Err(match retryable {
                            BackendError::Timeout => GatewayError::Timeout { attempts },
                            BackendError::Transport(message) => {
                                GatewayError::Transport { attempts, message }
                            }
                            _ => unreachable!(),
                        });
                    }
                    log::debug!("{template}: attempt {attempts} failed: {retryable:?}");
                    let delay = self
                        .config
                        .backoff_ms
                        .saturating_mul(1u64 << (attempts - 1).min(16));
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        };
        self.record(CallRecord {
            template: template.to_string(),
            prompt_hash: prompt_hash(prompt),
            response: outcome.as_ref().cloned().unwrap_or_default(),
            latency_ms: started.elapsed().as_millis() as u64,
            attempts,
            error: outcome.as_ref().err().map(ToString::to_string),
        });
        outcome
    }

    /// Sends a prompt and parses its JSON payload with `parse`, re-asking up
    /// to `retries` more times when the output is malformed.
    pub fn complete_json<T>(
        &self,
        template: &str,
        prompt: &str,
        retries: u32,
        mut parse: impl FnMut(&str) -> Result<T, GatewayError>,
    ) -> Result<(T, String), GatewayError> {
        let mut last = None;
        for _ in 0..=retries {
            let text = self.complete(template, prompt)?;
            match parse(&text) {
                Ok(v) => return Ok((v, text)),
                Err(e @ GatewayError::MalformedModelOutput { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}
