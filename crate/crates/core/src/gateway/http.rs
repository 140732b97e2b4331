use std::collections::BTreeMap;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, CompletionRequest, GatewayError};

/// Environment variable holding the API credential by default.
pub const API_KEY_ENV: &str = "LCPROBE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackoffPolicy {
    pub base: Duration,
    pub factor: f64,
    pub max_attempts: u32,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self { base: Duration::from_secs(1), factor: 2.0, max_attempts: 5 }
    }
}

impl BackoffPolicy {
    /// Delay slept before attempt `attempt` (0-based); zero for the first.
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt == 0 {
            Duration::ZERO
        } else {
            self.base.mul_f64(self.factor.powi(attempt as i32 - 1))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    /// Name of the environment variable with the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    /// Decoding parameters merged into every request body.
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    API_KEY_ENV.to_string()
}

fn default_timeout_secs() -> u64 {
    120
}

/// Chat-completion client: one user message per call.
pub struct HttpBackend {
    config: HttpConfig,
    backoff: BackoffPolicy,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        Self::with_backoff(config, BackoffPolicy::default())
    }

    pub fn with_backoff(config: HttpConfig, backoff: BackoffPolicy) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self { config, backoff, client, api_key })
    }

    fn body(&self, request: &CompletionRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": request.prompt }],
        });
        let obj = body.as_object_mut().expect("object literal");
        for (k, v) in self.config.params.iter().chain(&request.params) {
            obj.insert(k.clone(), v.clone());
        }
        body
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<String, Attempt> {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        for (k, v) in &self.config.headers {
            req = req.header(k, v);
        }
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fail(GatewayError::Status { status: status.as_u16(), body: text }));
        }
        extract_content(&text).map_err(Attempt::Fail)
    }
}

enum Attempt {
    Retry(String),
    Fail(GatewayError),
}

fn extract_content(text: &str) -> Result<String, GatewayError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| GatewayError::Malformed("missing choices[0].message.content".into()))
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.config.model)
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let body = self.body(request);
        let mut last = String::new();
        for attempt in 0..self.backoff.max_attempts {
            let delay = self.backoff.delay_before(attempt);
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    warn!("{} attempt {} failed: {msg}", self.id(), attempt + 1);
                    last = msg;
                }
            }
        }
        Err(GatewayError::Transport { attempts: self.backoff.max_attempts, message: last })
    }
}
