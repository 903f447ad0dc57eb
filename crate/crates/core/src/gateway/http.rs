use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{BackendError, GatewayConfig, GatewayError, ModelBackend};

/// Chat-completions style HTTP backend.
///
/// Sends `POST {endpoint}/chat/completions` with `{model, messages,
/// temperature}` and reads `choices[0].message.content`. The bearer token
/// comes from the environment variable named in the config.
pub struct HttpBackend {
    client: Client,
}

impl HttpBackend {
    pub fn new(config: &GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        if config.endpoint.is_empty() {
            return Err(GatewayError::Config("endpoint is empty".into()));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpBackend { client })
    }

    fn url(endpoint: &str, path: &str) -> String {
        let base = endpoint.trim_end_matches('/');
        if base.ends_with(path) {
            base.to_string()
        } else {
            format!("{base}/{path}")
        }
    }

    fn post(
        &self,
        config: &GatewayConfig,
        path: &str,
        body: &Value,
    ) -> Result<Value, BackendError> {
        let mut req = self
            .client
            .post(Self::url(&config.endpoint, path))
            .json(body);
        if let Some(key) = config.api_key() {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            s if s.is_success() => serde_json::from_str(&text)
                .map_err(|e| BackendError::Fatal(format!("response is not JSON: {e}"))),
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Err(BackendError::Auth(text)),
            StatusCode::TOO_MANY_REQUESTS | StatusCode::REQUEST_TIMEOUT => {
                Err(BackendError::Transport(format!("{status}: {text}")))
            }
            s if s.is_server_error() => Err(BackendError::Transport(format!("{status}: {text}"))),
            s => Err(BackendError::Fatal(format!("{s}: {text}"))),
        }
    }

    /// Embeds each input with the config's embedding model (`/embeddings`).
    pub fn embed(
        &self,
        config: &GatewayConfig,
        inputs: &[String],
    ) -> Result<Vec<Vec<f64>>, BackendError> {
        let model = config.embedding_model.as_deref().unwrap_or(&config.model);
        let body = json!({ "model": model, "input": inputs });
        let v = self.post(config, "embeddings", &body)?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| BackendError::Fatal("embedding response lacks data".into()))?;
        data.iter()
            .map(|d| {
                d["embedding"]
                    .as_array()
                    .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| BackendError::Fatal("malformed embedding".into()))
            })
            .collect()
    }
}

pub(crate) fn chat_body(config: &GatewayConfig, prompt: &str) -> Value {
    json!({
        "model": config.model,
        "messages": [{ "role": "user", "content": prompt }],
        "temperature": config.temperature,
    })
}

impl ModelBackend for HttpBackend {
    fn send(&self, prompt: &str, config: &GatewayConfig) -> Result<String, BackendError> {
        let v = self.post(config, "chat/completions", &chat_body(config, prompt))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal("response lacks choices[0].message.content".into()))
    }
}
