//! Chat-completion and embedding interfaces plus token accounting.
//!
//! Two implementations ship with the crate: [`scripted`] providers for
//! hermetic, bit-deterministic tests, and an [`http`] client for
//! OpenAI-compatible endpoints.

pub mod http;
pub mod scripted;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::{Arc, Mutex};

/// Why a provider call was made. Every call lands in exactly one ledger
/// record carrying its purpose tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Policy,
    Value,
    Reflection,
    Debate,
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Purpose::Policy => "policy",
            Purpose::Value => "value",
            Purpose::Reflection => "reflection",
            Purpose::Debate => "debate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into() }
    }
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }
    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into() }
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub purpose: Purpose,
}

impl ChatRequest {
    pub fn new(purpose: Purpose, messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: 1.0,
            top_p: 0.95,
            max_tokens: 1024,
            purpose,
        }
    }

    /// Flat text of the whole prompt; scripted rules match substrings of it.
    pub fn fingerprint(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&format!("{}: {}\n", m.role, m.text));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

pub trait ChatProvider: Send + Sync {
    /// Run one chat completion. Implementations record token usage in their
    /// ledger before returning.
    fn chat_complete(&self, req: &ChatRequest) -> Result<ChatResponse>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str, purpose: Purpose) -> Result<Vec<f32>>;
    fn dimension(&self) -> usize;
}

/// Whitespace-token approximation used by scripted providers and synthetic
/// accounting. Exactness only matters for relative comparisons.
pub fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub purpose: Purpose,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenTotals {
    pub fn combined(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

/// Append-only record of every provider call, tagged by purpose.
#[derive(Debug, Default)]
pub struct TokenLedger {
    records: Mutex<Vec<LedgerRecord>>,
}

impl TokenLedger {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn record(&self, purpose: Purpose, input_tokens: u64, output_tokens: u64) {
        self.records.lock().unwrap().push(LedgerRecord {
            purpose,
            input_tokens,
            output_tokens,
        });
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<LedgerRecord> {
        self.records.lock().unwrap().clone()
    }

    /// Records appended after position `from` (for per-episode accounting).
    pub fn records_since(&self, from: usize) -> Vec<LedgerRecord> {
        let records = self.records.lock().unwrap();
        records[from.min(records.len())..].to_vec()
    }

    pub fn totals(&self) -> TokenTotals {
        let records = self.records.lock().unwrap();
        sum_records(records.iter())
    }

    pub fn totals_for(&self, purpose: Purpose) -> TokenTotals {
        let records = self.records.lock().unwrap();
        sum_records(records.iter().filter(|r| r.purpose == purpose))
    }

    pub fn call_count(&self, purpose: Purpose) -> usize {
        self.records
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.purpose == purpose)
            .count()
    }
}

fn sum_records<'a, I>(records: I) -> TokenTotals
where
    I: IntoIterator<Item = &'a LedgerRecord>,
{
    let mut totals = TokenTotals::default();
    for r in records {
        totals.input_tokens += r.input_tokens;
        totals.output_tokens += r.output_tokens;
    }
    totals
}

/// Total tokens of `ledger` relative to `baseline` (the ReACT-style 1x run).
pub fn tokens_relative(ledger: &TokenLedger, baseline: &TokenLedger) -> Result<f64> {
    relative_totals(ledger.totals(), baseline.totals())
}

/// Same ratio computed from already-summed totals.
pub fn relative_totals(totals: TokenTotals, baseline: TokenTotals) -> Result<f64> {
    let base = baseline.combined();
    if base == 0 {
        return Err(Error::Contract(
            "baseline ledger has zero total tokens".into(),
        ));
    }
    Ok(totals.combined() as f64 / base as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_totals_equal_sum_of_records() {
        let ledger = TokenLedger::new();
        for _ in 0..20 {
            ledger.record(Purpose::Policy, 100, 10);
        }
        let totals = ledger.totals();
        assert_eq!(totals.input_tokens, 2000);
        assert_eq!(totals.output_tokens, 200);
        assert_eq!(ledger.call_count(Purpose::Policy), 20);
        assert_eq!(ledger.call_count(Purpose::Value), 0);
    }

    #[test]
    fn tokens_relative_identity_and_double() {
        let a = TokenLedger::new();
        let b = TokenLedger::new();
        a.record(Purpose::Policy, 500, 500);
        b.record(Purpose::Policy, 500, 500);
        assert_eq!(tokens_relative(&a, &b).unwrap(), 1.0);
        a.record(Purpose::Value, 600, 400);
        assert_eq!(tokens_relative(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn tokens_relative_mixed_records() {
        let a = TokenLedger::new();
        a.record(Purpose::Policy, 4000, 300);
        a.record(Purpose::Value, 2500, 500);
        a.record(Purpose::Debate, 1800, 200);
        let b = TokenLedger::new();
        b.record(Purpose::Policy, 900, 100);
        assert!((tokens_relative(&a, &b).unwrap() - 9.3).abs() < 1e-12);
    }

    #[test]
    fn zero_baseline_is_an_error() {
        let a = TokenLedger::new();
        a.record(Purpose::Policy, 1, 1);
        let b = TokenLedger::new();
        assert!(tokens_relative(&a, &b).is_err());
    }

    #[test]
    fn approx_tokens_counts_whitespace_tokens() {
        assert_eq!(approx_tokens("click [5]"), 2);
        assert_eq!(approx_tokens("  a  b\nc "), 3);
        assert_eq!(approx_tokens(""), 0);
    }
}
