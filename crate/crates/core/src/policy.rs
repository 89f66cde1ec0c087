//! The action policy: sampled-response aggregation over a chat provider,
//! plus scripted implementations for tests.

use crate::action::Action;
use crate::error::{Error, Result};
use crate::prompts::{self, RenderedReflection};
use crate::provider::{ChatMessage, ChatProvider, ChatRequest, Purpose};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Everything a policy may look at when proposing actions.
#[derive(Debug, Clone, Default)]
pub struct DecisionContext {
    pub goal: String,
    /// Current observation (accessibility tree, URL on the last line).
    pub observation: String,
    /// Canonical texts of actions taken so far (executed + search path).
    pub previous_actions: Vec<String>,
    /// Retrieved reflections to inject into the prompt, if any.
    pub reflections: Vec<RenderedReflection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionPrior {
    pub action: Action,
    pub count: usize,
    pub prior: f64,
}

/// Aggregated action distribution: unique actions with sample counts and
/// priors normalized by the total sample count. Entries are sorted by
/// descending count; count ties break on canonical action text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActionDistribution {
    pub entries: Vec<ActionPrior>,
    pub total_samples: usize,
}

impl ActionDistribution {
    pub fn top(&self) -> Option<&Action> {
        self.entries.first().map(|e| &e.action)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Group identical actions (canonical equality), keep the top `breadth` by
/// count, and normalize priors by the total number of samples.
pub fn aggregate_actions(samples: &[Action], breadth: usize) -> Result<ActionDistribution> {
    if samples.is_empty() {
        return Err(Error::Contract(
            "cannot aggregate an empty action multiset".into(),
        ));
    }
    let total = samples.len();
    let mut counts: BTreeMap<String, (Action, usize)> = BTreeMap::new();
    for action in samples {
        counts
            .entry(action.canonical())
            .and_modify(|(_, c)| *c += 1)
            .or_insert_with(|| (action.clone(), 1));
    }
    let mut entries: Vec<ActionPrior> = counts
        .into_iter()
        .map(|(_, (action, count))| ActionPrior {
            prior: count as f64 / total as f64,
            action,
            count,
        })
        .collect();
    // BTreeMap iteration gives canonical-text order, so a stable sort by
    // descending count leaves ties in canonical order.
    entries.sort_by_key(|e| std::cmp::Reverse(e.count));
    entries.truncate(breadth);
    Ok(ActionDistribution {
        entries,
        total_samples: total,
    })
}

pub trait Policy: Send + Sync {
    /// Propose up to the configured breadth of candidate actions with priors.
    fn propose(&self, ctx: &DecisionContext) -> Result<ActionDistribution>;

    /// One greedy action (the ReACT step): a single sample where that is
    /// meaningful, otherwise the distribution's top action.
    fn propose_one(&self, ctx: &DecisionContext) -> Result<Action> {
        self.propose(ctx)?
            .top()
            .cloned()
            .ok_or_else(|| Error::Provider("policy returned no actions".into()))
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn propose(&self, ctx: &DecisionContext) -> Result<ActionDistribution> {
        (**self).propose(ctx)
    }
    fn propose_one(&self, ctx: &DecisionContext) -> Result<Action> {
        (**self).propose_one(ctx)
    }
}

#[derive(Debug, Clone)]
pub struct PolicyConfig {
    /// Number of sampled responses per proposal.
    pub samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    /// Maximum number of unique actions kept (the breadth limit b).
    pub breadth: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            samples: 20,
            temperature: 1.0,
            top_p: 0.95,
            breadth: 5,
        }
    }
}

/// Policy backed by a chat provider: samples `k` responses, parses each into
/// an action, drops unparseable ones, and aggregates counts.
pub struct ChatPolicy {
    provider: Arc<dyn ChatProvider>,
    pub config: PolicyConfig,
}

impl ChatPolicy {
    pub fn new(provider: Arc<dyn ChatProvider>, config: PolicyConfig) -> Self {
        Self { provider, config }
    }

    fn request(&self, ctx: &DecisionContext) -> ChatRequest {
        let reflections = prompts::reflections_block(&ctx.reflections);
        let user = prompts::render(
            prompts::POLICY_USER,
            &[
                ("reflections", &reflections),
                ("observation", &ctx.observation),
                ("objective", &ctx.goal),
                ("previous_actions", &prompts::previous_actions(&ctx.previous_actions)),
            ],
        );
        let mut req = ChatRequest::new(
            Purpose::Policy,
            vec![prompts::system_message(), ChatMessage::user(user)],
        );
        req.temperature = self.config.temperature;
        req.top_p = self.config.top_p;
        req
    }

    /// Sample `k` responses and parse them into an action multiset.
    /// Unparseable responses are dropped (the parse rate is logged).
    pub fn sample_actions(&self, ctx: &DecisionContext, k: usize) -> Result<Vec<Action>> {
        if k == 0 {
            return Err(Error::Contract("sample count must be >= 1".into()));
        }
        let req = self.request(ctx);
        let mut actions = Vec::with_capacity(k);
        let mut dropped = 0usize;
        for _ in 0..k {
            let resp = self.provider.chat_complete(&req)?;
            match Action::parse_from_response(&resp.text) {
                Ok(action) => actions.push(action),
                Err(_) => dropped += 1,
            }
        }
        if dropped > 0 {
            log::warn!(
                "policy sampling: dropped {dropped}/{k} unparseable responses"
            );
        }
        Ok(actions)
    }
}

impl Policy for ChatPolicy {
    fn propose(&self, ctx: &DecisionContext) -> Result<ActionDistribution> {
        let samples = self.sample_actions(ctx, self.config.samples)?;
        if samples.is_empty() {
            // all k responses unparseable; the caller decides what to do
            return Ok(ActionDistribution::default());
        }
        aggregate_actions(&samples, self.config.breadth)
    }

    fn propose_one(&self, ctx: &DecisionContext) -> Result<Action> {
        let samples = self.sample_actions(ctx, 1)?;
        samples
            .into_iter()
            .next()
            .ok_or_else(|| Error::Parse("single policy sample was unparseable".into()))
    }
}

/// Table-driven policy for tests: candidate actions with counts, keyed by a
/// substring of the observation (first matching key wins; keys are checked
/// in insertion order).
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    rules: Vec<(String, Vec<(Action, usize)>)>,
    pub breadth: usize,
}

impl ScriptedPolicy {
    pub fn new() -> Self {
        Self { rules: Vec::new(), breadth: 5 }
    }

    pub fn when(mut self, obs_contains: impl Into<String>, weighted: Vec<(&str, usize)>) -> Self {
        let parsed = weighted
            .into_iter()
            .map(|(a, c)| (Action::parse(a).expect("scripted action parses"), c))
            .collect();
        self.rules.push((obs_contains.into(), parsed));
        self
    }
}

impl Policy for ScriptedPolicy {
    fn propose(&self, ctx: &DecisionContext) -> Result<ActionDistribution> {
        for (needle, weighted) in &self.rules {
            if ctx.observation.contains(needle.as_str()) {
                let mut samples = Vec::new();
                for (action, count) in weighted {
                    samples.extend(std::iter::repeat_n(action.clone(), *count));
                }
                return aggregate_actions(&samples, self.breadth);
            }
        }
        Ok(ActionDistribution::default())
    }
}
