//! Deterministic providers for hermetic tests.
//!
//! The chat provider resolves each call against an ordered rule list keyed
//! by (purpose, prompt substring, per-purpose call index), then per-purpose
//! defaults, then a global fallback, so tests can script exactly the
//! behavior under study and leave the rest canned.

use super::{
    approx_tokens, ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, Purpose,
    TokenLedger,
};
use crate::error::{Error, Result};
use crate::seeds::substream;
use rand::Rng;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub purpose: Option<Purpose>,
    /// Matches when the request fingerprint contains this substring.
    pub contains: Option<String>,
    /// Matches only the n-th call of this purpose (0-based).
    pub index: Option<usize>,
    pub response: String,
}

#[derive(Default)]
pub struct ScriptedChatProvider {
    rules: Vec<ScriptRule>,
    defaults: HashMap<Purpose, Vec<String>>,
    fallback: String,
    calls: Mutex<HashMap<Purpose, usize>>,
    ledger: Option<Arc<TokenLedger>>,
}

impl ScriptedChatProvider {
    pub fn new() -> Self {
        Self {
            fallback: "STATUS CODE: C".to_string(),
            ..Self::default()
        }
    }

    pub fn with_ledger(mut self, ledger: Arc<TokenLedger>) -> Self {
        self.ledger = Some(ledger);
        self
    }

    pub fn with_fallback(mut self, response: impl Into<String>) -> Self {
        self.fallback = response.into();
        self
    }

    /// Fixed response for every call of `purpose` (unless a rule matches).
    pub fn respond(mut self, purpose: Purpose, response: impl Into<String>) -> Self {
        self.defaults.insert(purpose, vec![response.into()]);
        self
    }

    /// Responses for `purpose` cycling in order, keyed by call index.
    pub fn respond_cycling<I, S>(mut self, purpose: Purpose, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.defaults
            .insert(purpose, responses.into_iter().map(Into::into).collect());
        self
    }

    pub fn rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// Shorthand: respond with `response` whenever a `purpose` prompt
    /// contains `needle`.
    pub fn when_contains(
        self,
        purpose: Purpose,
        needle: impl Into<String>,
        response: impl Into<String>,
    ) -> Self {
        self.rule(ScriptRule {
            purpose: Some(purpose),
            contains: Some(needle.into()),
            index: None,
            response: response.into(),
        })
    }

    /// Respond with `response` on the `index`-th call of `purpose`.
    pub fn at_index(self, purpose: Purpose, index: usize, response: impl Into<String>) -> Self {
        self.rule(ScriptRule {
            purpose: Some(purpose),
            contains: None,
            index: Some(index),
            response: response.into(),
        })
    }

    fn resolve(&self, req: &ChatRequest, call_index: usize) -> String {
        let fingerprint = req.fingerprint();
        for rule in &self.rules {
            if let Some(p) = rule.purpose {
                if p != req.purpose {
                    continue;
                }
            }
            if let Some(i) = rule.index {
                if i != call_index {
                    continue;
                }
            }
            if let Some(needle) = &rule.contains {
                if !fingerprint.contains(needle.as_str()) {
                    continue;
                }
            }
            return rule.response.clone();
        }
        if let Some(responses) = self.defaults.get(&req.purpose) {
            if !responses.is_empty() {
                return responses[call_index % responses.len()].clone();
            }
        }
        self.fallback.clone()
    }
}

impl ChatProvider for ScriptedChatProvider {
    fn chat_complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        if req.messages.is_empty() {
            return Err(Error::Contract("chat request has no messages".into()));
        }
        let call_index = {
            let mut calls = self.calls.lock().unwrap();
            let slot = calls.entry(req.purpose).or_insert(0);
            let idx = *slot;
            *slot += 1;
            idx
        };
        let text = self.resolve(req, call_index);
        let input_tokens = approx_tokens(&req.fingerprint());
        let output_tokens = approx_tokens(&text);
        if let Some(ledger) = &self.ledger {
            ledger.record(req.purpose, input_tokens, output_tokens);
        }
        Ok(ChatResponse {
            text,
            input_tokens,
            output_tokens,
        })
    }
}

/// Deterministic embedding provider: the vector is derived from a hash of
/// the input text, so identical texts embed identically and distinct texts
/// are nearly orthogonal in expectation.
pub struct ScriptedEmbedder {
    dim: usize,
    ledger: Option<Arc<TokenLedger>>,
}

impl ScriptedEmbedder {
    /// Default test dimension is 64.
    pub fn new(dim: usize) -> Self {
        Self { dim, ledger: None }
    }

    pub fn with_ledger(mut self, ledger: Arc<TokenLedger>) -> Self {
        self.ledger = Some(ledger);
        self
    }
}

impl Default for ScriptedEmbedder {
    fn default() -> Self {
        Self::new(64)
    }
}

impl EmbeddingProvider for ScriptedEmbedder {
    fn embed(&self, text: &str, purpose: Purpose) -> Result<Vec<f32>> {
        if text.is_empty() {
            return Err(Error::Contract("embedding text is empty".into()));
        }
        let mut rng = substream(0x5eed, &["embed", text]);
        let v: Vec<f32> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if let Some(ledger) = &self.ledger {
            ledger.record(purpose, approx_tokens(text), 0);
        }
        Ok(v)
    }

    fn dimension(&self) -> usize {
        self.dim
    }
}
