//! Record/replay cache: a directory of JSON records named by the hash of
//! `(prompt hash, request tag)`.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, CompletionRequest, GatewayError, RequestTag};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub schema_version: u32,
    pub prompt_hash: String,
    pub tag: RequestTag,
    pub backend_id: String,
    pub response: String,
}

#[derive(Clone)]
pub enum ReplayMode {
    /// Misses are errors.
    Strict,
    /// Misses are forwarded to the inner backend and written to the cache.
    Record(Arc<dyn Backend>),
}

pub struct ReplayBackend {
    dir: PathBuf,
    mode: ReplayMode,
    // single writer; readers go straight to the filesystem
    write_lock: Mutex<()>,
}

impl ReplayBackend {
    pub fn new(dir: impl Into<PathBuf>, mode: ReplayMode) -> Result<Self, GatewayError> {
        let dir = dir.into();
        match mode {
            ReplayMode::Record(_) => {
                std::fs::create_dir_all(&dir).map_err(|e| GatewayError::Cache(format!("{}: {e}", dir.display())))?
            }
            ReplayMode::Strict if !dir.is_dir() => {
                return Err(GatewayError::Cache(format!("{} is not a directory", dir.display())))
            }
            ReplayMode::Strict => {}
        }
        Ok(Self { dir, mode, write_lock: Mutex::new(()) })
    }

    pub fn strict(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        Self::new(dir, ReplayMode::Strict)
    }

    pub fn recording(dir: impl Into<PathBuf>, inner: Arc<dyn Backend>) -> Result<Self, GatewayError> {
        Self::new(dir, ReplayMode::Record(inner))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record_key(prompt_hash: &str, tag: &RequestTag) -> String {
        crate::sha256_hex(format!("{prompt_hash}\n{}", tag.key()))
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn read(&self, path: &Path, prompt_hash: &str, tag: &RequestTag) -> Result<Option<String>, GatewayError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("{}: {e}", path.display()))),
        };
        let rec: ReplayRecord =
            serde_json::from_str(&text).map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        if rec.prompt_hash != prompt_hash || rec.tag != *tag {
            return Err(GatewayError::Cache(format!("{}: record does not match its key", path.display())));
        }
        Ok(Some(rec.response))
    }

    fn write(&self, path: &Path, record: &ReplayRecord) -> Result<(), GatewayError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_string_pretty(record).map_err(|e| GatewayError::Cache(e.to_string()))?;
        std::fs::write(&tmp, body + "\n")
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> String {
        "replay".to_string()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let prompt_hash = request.prompt_hash();
        let key = Self::record_key(&prompt_hash, &request.tag);
        let path = self.path_for(&key);
        if let Some(hit) = self.read(&path, &prompt_hash, &request.tag)? {
            return Ok(hit);
        }
        match &self.mode {
            ReplayMode::Strict => Err(GatewayError::CacheMiss { key: format!("{key} ({})", request.tag.key()) }),
            ReplayMode::Record(inner) => {
                let response = inner.complete(request)?;
                let record = ReplayRecord {
                    schema_version: RECORD_SCHEMA_VERSION,
                    prompt_hash,
                    tag: request.tag.clone(),
                    backend_id: inner.id(),
                    response: response.clone(),
                };
                self.write(&path, &record)?;
                Ok(response)
            }
        }
    }
}
