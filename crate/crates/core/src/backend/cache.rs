//! Write-through response cache and the replay backend built on it.
//!
//! The store is an append-only JSONL file. Each line carries the request
//! hash, a full echo of the request, the response, and a timestamp; on open
//! every line's hash is recomputed from the echo, so silent corruption is
//! caught before it can poison a run. Hashing covers the backend name plus
//! every request field: two backends, or two parameterizations, never share
//! an entry.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BackendError, CompletionRequest, CompletionResponse, CostLedger, LmBackend,
    NextTokenDistribution,
};

/// Everything that identifies a request, echoed into the store.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RequestEcho {
    pub backend: String,
    pub kind: RequestKind,
    pub prompt: String,
    #[serde(default)]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Option<Vec<String>>,
    #[serde(default)]
    pub top_logprobs: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Complete,
    Logprobs,
}

impl RequestEcho {
    pub fn for_completion(backend: &str, request: &CompletionRequest) -> Self {
        RequestEcho {
            backend: backend.to_string(),
            kind: RequestKind::Complete,
            prompt: request.prompt.clone(),
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            stop_sequences: request.stop_sequences.clone(),
            top_logprobs: request.top_logprobs,
        }
    }

    pub fn for_logprobs(backend: &str, prompt: &str) -> Self {
        RequestEcho {
            backend: backend.to_string(),
            kind: RequestKind::Logprobs,
            prompt: prompt.to_string(),
            max_tokens: 0,
            temperature: 0.0,
            stop_sequences: None,
            top_logprobs: None,
        }
    }

    /// Digest over the canonical JSON encoding; field order is fixed by the
    /// struct, so the hash is stable across runs and processes.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("request echo serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachedResponse {
    Completion(CompletionResponse),
    Distribution(NextTokenDistribution),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheRecord {
    hash: String,
    request: RequestEcho,
    response: CachedResponse,
    ts: u64,
}

/// Append-only JSONL store keyed by request hash.
#[derive(Debug)]
pub struct CacheStore {
    path: String,
    index: Mutex<HashMap<String, CachedResponse>>,
    writer: Mutex<File>,
}

impl CacheStore {
    /// Opens (creating if needed) and verifies the store: every record's
    /// hash must match its request echo.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let mut index = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|source| BackendError::Io {
                path: path.display().to_string(),
                source,
            })?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| BackendError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord =
                    serde_json::from_str(&line).map_err(|e| BackendError::CacheCorrupt {
                        line: i + 1,
                        detail: format!("unparseable record: {e}"),
                    })?;
                let recomputed = record.request.hash();
                if recomputed != record.hash {
                    return Err(BackendError::CacheCorrupt {
                        line: i + 1,
                        detail: format!(
                            "stored hash {} does not match request (expected {})",
                            record.hash, recomputed
                        ),
                    });
                }
                index.insert(record.hash, record.response);
            }
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| BackendError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(CacheStore {
            path: path.display().to_string(),
            index: Mutex::new(index),
            writer: Mutex::new(writer),
        })
    }

    pub fn len(&self) -> usize {
        self.index.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, hash: &str) -> Option<CachedResponse> {
        self.index.lock().unwrap().get(hash).cloned()
    }

    pub fn put(&self, echo: RequestEcho, response: CachedResponse) -> Result<(), BackendError> {
        let hash = echo.hash();
        let record = CacheRecord {
            hash: hash.clone(),
            request: echo,
            response: response.clone(),
            ts: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| BackendError::Protocol(format!("cache serialization: {e}")))?;
        {
            let mut writer = self.writer.lock().unwrap();
            writeln!(writer, "{line}").map_err(|source| BackendError::Io {
                path: self.path.clone(),
                source,
            })?;
            writer.flush().map_err(|source| BackendError::Io {
                path: self.path.clone(),
                source,
            })?;
        }
        self.index.lock().unwrap().insert(hash, response);
        Ok(())
    }
}

/// Wraps a backend with a write-through cache. Hits never touch the inner
/// backend, so its ledger keeps counting only real fetches.
pub struct CachedBackend {
    inner: Box<dyn LmBackend>,
    store: CacheStore,
    hits: AtomicU64,
    fetches: AtomicU64,
}

impl CachedBackend {
    pub fn new(inner: Box<dyn LmBackend>, store: CacheStore) -> Self {
        CachedBackend {
            inner,
            store,
            hits: AtomicU64::new(0),
            fetches: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn fetches(&self) -> u64 {
        self.fetches.load(Ordering::SeqCst)
    }
}

impl LmBackend for CachedBackend {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn supports_logprobs(&self) -> bool {
        self.inner.supports_logprobs()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let echo = RequestEcho::for_completion(self.inner.name(), request);
        let hash = echo.hash();
        if let Some(CachedResponse::Completion(r)) = self.store.get(&hash) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(r);
        }
        let response = self.inner.complete(request)?;
        self.fetches.fetch_add(1, Ordering::SeqCst);
        self.store
            .put(echo, CachedResponse::Completion(response.clone()))?;
        Ok(response)
    }

    fn next_token_logprobs(&self, prompt: &str) -> Result<NextTokenDistribution, BackendError> {
        let echo = RequestEcho::for_logprobs(self.inner.name(), prompt);
        let hash = echo.hash();
        if let Some(CachedResponse::Distribution(d)) = self.store.get(&hash) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(d);
        }
        let response = self.inner.next_token_logprobs(prompt)?;
        self.fetches.fetch_add(1, Ordering::SeqCst);
        self.store
            .put(echo, CachedResponse::Distribution(response.clone()))?;
        Ok(response)
    }

    fn ledger(&self) -> &CostLedger {
        self.inner.ledger()
    }
}

/// Serves cached responses only; a miss is an error, never a fetch.
#[derive(Debug)]
pub struct ReplayBackend {
    name: String,
    store: CacheStore,
    /// Backend name recorded in the store (requests were hashed under it).
    source_backend: String,
    ledger: CostLedger,
}

impl ReplayBackend {
    pub fn open(source_backend: &str, path: &Path, rate_per_1k: f64) -> Result<Self, BackendError> {
        let store = CacheStore::open(path)?;
        Ok(ReplayBackend {
            name: format!("replay:{source_backend}"),
            store,
            source_backend: source_backend.to_string(),
            ledger: CostLedger::new(rate_per_1k),
        })
    }
}

impl LmBackend for ReplayBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports_logprobs(&self) -> bool {
        true
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let echo = RequestEcho::for_completion(&self.source_backend, request);
        let hash = echo.hash();
        match self.store.get(&hash) {
            Some(CachedResponse::Completion(r)) => Ok(r),
            _ => Err(BackendError::ReplayMiss(hash)),
        }
    }

    fn next_token_logprobs(&self, prompt: &str) -> Result<NextTokenDistribution, BackendError> {
        let echo = RequestEcho::for_logprobs(&self.source_backend, prompt);
        let hash = echo.hash();
        match self.store.get(&hash) {
            Some(CachedResponse::Distribution(d)) => Ok(d),
            _ => Err(BackendError::ReplayMiss(hash)),
        }
    }

    fn ledger(&self) -> &CostLedger {
        &self.ledger
    }
}
