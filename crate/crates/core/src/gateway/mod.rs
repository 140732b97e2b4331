//! Model backends.
//!
//! Every backend answers a [`CompletionRequest`] with raw response text.
//! Backends must tolerate concurrent calls.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod http;
mod replay;
mod scripted;

pub use http::{BackoffPolicy, HttpBackend, HttpConfig, API_KEY_ENV};
pub use replay::{ReplayBackend, ReplayMode, ReplayRecord};
pub use scripted::{extract_state, state_fingerprint, LawEffect, LawRule, Matcher, ScriptedBackend, ScriptedLaw};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("replay cache miss for {key}")]
    CacheMiss { key: String },
    #[error("replay cache: {0}")]
    Cache(String),
    #[error("invalid scripted law: {0}")]
    InvalidLaw(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// Errors that must abort an estimate instead of counting as a failed
    /// attempt.
    pub fn is_fatal(&self) -> bool {
        matches!(self, GatewayError::CacheMiss { .. } | GatewayError::Cache(_) | GatewayError::Config(_))
    }
}

/// Identifies one call within an experiment; part of the replay key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestTag {
    pub state_ref: String,
    pub seed: u64,
    pub trial: u64,
    pub attempt: u32,
}

impl RequestTag {
    pub fn key(&self) -> String {
        format!("{}|seed={}|trial={}|attempt={}", self.state_ref, self.seed, self.trial, self.attempt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    /// Decoding parameters, passed through to the backend untouched.
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    pub backend_id: String,
    pub tag: RequestTag,
}

impl CompletionRequest {
    pub fn new(prompt: String, backend_id: String, tag: RequestTag) -> Self {
        Self { prompt, params: BTreeMap::new(), backend_id, tag }
    }

    pub fn prompt_hash(&self) -> String {
        crate::sha256_hex(self.prompt.as_bytes())
    }
}

pub trait Backend: Send + Sync {
    /// Stable identifier recorded in provenance.
    fn id(&self) -> String;

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

impl<T: Backend + ?Sized> Backend for std::sync::Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}
