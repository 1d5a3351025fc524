//! Language model access: one trait, several interchangeable backends.
//!
//! Every backend answers two kinds of queries: free-text completion and the
//! next-token log-probability distribution for a prompt. Real providers sit
//! behind HTTP adapters; deterministic mocks and a replay store make every
//! experiment runnable, and byte-reproducible, without network access.
//! A write-through cache wraps any backend so repeated prompts are fetched
//! once, and a cost ledger counts the tokens that were actually bought.

mod cache;
mod cost;
mod http;
mod mock;

pub use cache::{CacheStore, CachedBackend, CachedResponse, ReplayBackend, RequestEcho};
pub use cost::{estimate_cost, format_dollars, CostLedger, LedgerSnapshot, PlannedRun};
pub use http::HttpBackend;
pub use mock::{EchoBackend, MockBackend};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("provider refused the request: {0}")]
    Refused(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend {0} does not expose next-token log-probabilities")]
    LogprobsUnsupported(String),
    #[error("api key environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("gave up after {attempts} attempts: {last}; attempt log: {log:?}")]
    RetriesExhausted {
        attempts: u32,
        last: String,
        log: Vec<String>,
    },
    #[error("replay store has no response for this request (hash {0})")]
    ReplayMiss(String),
    #[error("cache record {line} is corrupt: {detail}")]
    CacheCorrupt { line: usize, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Only transport-level failures and rate limits are retried; provider
    /// refusals and protocol errors are permanent.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::RateLimited(_))
    }
}

/// A completion request as the pipeline sees it, provider-agnostic.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Option<Vec<String>>,
    /// Ask the provider to report this many top token log-probabilities.
    #[serde(default)]
    pub top_logprobs: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default)]
    pub token_logprobs: Option<Vec<f64>>,
    pub usage: Usage,
}

/// Log-probabilities of the single next token after a prompt. Keys are
/// token surfaces exactly as the backend reports them; the map usually
/// covers only the top-k tokens, so the exponentials sum to at most one.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NextTokenDistribution {
    pub logprobs: BTreeMap<String, f64>,
    pub prompt_hash: String,
}

impl NextTokenDistribution {
    pub fn new(logprobs: BTreeMap<String, f64>, prompt: &str) -> Self {
        NextTokenDistribution {
            logprobs,
            prompt_hash: hash_text(prompt),
        }
    }
}

/// Stable hex digest used for prompt identity and cache keys.
pub fn hash_text(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}

pub trait LmBackend: Send + Sync {
    fn name(&self) -> &str;
    fn supports_logprobs(&self) -> bool;
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
    fn next_token_logprobs(&self, prompt: &str) -> Result<NextTokenDistribution, BackendError>;
    fn ledger(&self) -> &CostLedger;
}

/// Declarative backend selection, loadable from config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub kind: BackendKind,
    /// Price per 1000 tokens, prompt and completion alike.
    #[serde(default)]
    pub price_per_1k: f64,
    /// Human-readable size label for model comparisons.
    #[serde(default)]
    pub params_label: Option<String>,
    /// Mock backends: path to the rule file.
    #[serde(default)]
    pub rules: Option<PathBuf>,
    /// Replay backends: path to a previously written cache store.
    #[serde(default)]
    pub store: Option<PathBuf>,
    /// HTTP backends.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub provider: Option<String>,
    #[serde(default)]
    pub top_logprobs: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
    Replay,
    /// Answers every interview question with the record's own value; the
    /// interview runner constructs it, it cannot be built from config alone.
    Echo,
}

/// Environment variable holding the HTTP API key.
pub const API_KEY_ENV: &str = "SILICON_API_KEY";

/// Builds a backend from its descriptor. Relative paths resolve against
/// `base_dir`. `seed` feeds the deterministic mocks.
pub fn build_backend(
    descriptor: &BackendDescriptor,
    seed: u64,
    base_dir: &Path,
) -> Result<Box<dyn LmBackend>, BackendError> {
    match descriptor.kind {
        BackendKind::Mock => {
            let rules = descriptor.rules.as_ref().ok_or_else(|| {
                BackendError::Config(format!("mock backend {} needs a rule file", descriptor.name))
            })?;
            let path = resolve(base_dir, rules);
            Ok(Box::new(MockBackend::from_rule_file(
                &descriptor.name,
                &path,
                seed,
                descriptor.price_per_1k,
            )?))
        }
        BackendKind::Replay => {
            let store = descriptor.store.as_ref().ok_or_else(|| {
                BackendError::Config(format!(
                    "replay backend {} needs a store path",
                    descriptor.name
                ))
            })?;
            let path = resolve(base_dir, store);
            Ok(Box::new(ReplayBackend::open(
                &descriptor.name,
                &path,
                descriptor.price_per_1k,
            )?))
        }
        BackendKind::Http => Ok(Box::new(HttpBackend::from_descriptor(descriptor)?)),
        BackendKind::Echo => Err(BackendError::Config(
            "echo backends are built by the interview runner, not from config".into(),
        )),
    }
}

pub(crate) fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Retry policy: up to `max_attempts` tries with exponential backoff,
/// retrying only errors marked retryable.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 200,
        }
    }
}

pub fn with_retries<T>(
    policy: &RetryPolicy,
    mut call: impl FnMut() -> Result<T, BackendError>,
) -> Result<T, BackendError> {
    let mut log = Vec::new();
    let mut attempt = 0;
    loop {
        attempt += 1;
        match call() {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() && attempt < policy.max_attempts => {
                log.push(format!("attempt {attempt}: {e}"));
                let delay = policy.base_delay_ms.saturating_mul(1 << (attempt - 1).min(8));
                if delay > 0 {
                    std::thread::sleep(std::time::Duration::from_millis(delay));
                }
            }
            Err(e) if e.is_retryable() => {
                log.push(format!("attempt {attempt}: {e}"));
                return Err(BackendError::RetriesExhausted {
                    attempts: attempt,
                    last: e.to_string(),
                    log,
                });
            }
            Err(e) => return Err(e),
        }
    }
}
