//! Token accounting and price estimation.
//!
//! The ledger is an atomic accumulator so concurrent workers can record
//! usage without locking; it only ever counts tokens that were actually
//! fetched from a backend, never cache hits. Dollar amounts round UP to the
//! next cent, the way providers bill fractional usage.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Debug, Default)]
pub struct CostLedger {
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    queries: AtomicU64,
    /// Price per 1000 tokens, in dollars. Stored as micro-dollars to stay
    /// atomic; set once at construction.
    rate_micro_per_1k: AtomicU64,
}

impl CostLedger {
    pub fn new(rate_per_1k: f64) -> Self {
        let ledger = CostLedger::default();
        ledger
            .rate_micro_per_1k
            .store((rate_per_1k * 1e6).round() as u64, Ordering::SeqCst);
        ledger
    }

    /// Records one successful query's usage. Retried attempts must call
    /// this once, on success.
    pub fn record(&self, prompt_tokens: u64, completion_tokens: u64) {
        self.prompt_tokens.fetch_add(prompt_tokens, Ordering::SeqCst);
        self.completion_tokens
            .fetch_add(completion_tokens, Ordering::SeqCst);
        self.queries.fetch_add(1, Ordering::SeqCst);
    }

    pub fn rate_per_1k(&self) -> f64 {
        self.rate_micro_per_1k.load(Ordering::SeqCst) as f64 / 1e6
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let prompt_tokens = self.prompt_tokens.load(Ordering::SeqCst);
        let completion_tokens = self.completion_tokens.load(Ordering::SeqCst);
        let queries = self.queries.load(Ordering::SeqCst);
        let rate = self.rate_per_1k();
        LedgerSnapshot {
            queries,
            prompt_tokens,
            completion_tokens,
            rate_per_1k: rate,
            cost_dollars: estimate_cost(prompt_tokens, completion_tokens, rate),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LedgerSnapshot {
    pub queries: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub rate_per_1k: f64,
    pub cost_dollars: f64,
}

/// The shape of a run that has not happened yet.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlannedRun {
    pub queries: u64,
    pub avg_prompt_tokens: u64,
    pub completion_tokens_per_query: u64,
    pub rate_per_1k: f64,
}

impl PlannedRun {
    pub fn cost_dollars(&self) -> f64 {
        estimate_cost(
            self.queries * self.avg_prompt_tokens,
            self.queries * self.completion_tokens_per_query,
            self.rate_per_1k,
        )
    }
}

/// Dollar cost of a token count: (prompt + completion) / 1000 * rate,
/// rounded up to a whole cent. The epsilon guard keeps exact amounts
/// (200k tokens at $0.06 is exactly $12) from ticking up a cent through
/// float representation error.
pub fn estimate_cost(prompt_tokens: u64, completion_tokens: u64, rate_per_1k: f64) -> f64 {
    let tokens = (prompt_tokens + completion_tokens) as f64;
    let raw_cents = tokens / 1000.0 * rate_per_1k * 100.0;
    let cents = (raw_cents - 1e-9).ceil().max(0.0);
    cents / 100.0
}

pub fn format_dollars(amount: f64) -> String {
    format!("${:.2}", amount)
}
