//! Fixture-driven policy and value oracles.
//!
//! These stand in for live model calls when running the bundled sites:
//! the policy proposes the task's per-page hint actions with fixed count
//! weights, and the value function reads the task's ground-truth page
//! values (optionally with seeded Gaussian noise). Both render the same
//! prompts the chat-backed implementations would send and record the
//! equivalent per-call token usage, so relative token metrics stay
//! meaningful in scripted runs.

use super::fixture::{Evaluator, PageGraph, TaskSpec};
use super::web::normalize_answer;
use crate::action::Action;
use crate::error::{Error, Result};
use crate::policy::{aggregate_actions, ActionDistribution, DecisionContext, Policy};
use crate::prompts;
use crate::provider::{approx_tokens, Purpose, TokenLedger};
use crate::value::{EvalContext, ValueEstimate, ValueEstimator, ValueMethod};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::{Arc, Mutex};

/// Count weights for n hint candidates (descending, summing to 20 samples).
fn hint_counts(n: usize) -> &'static [usize] {
    match n {
        0 => &[],
        1 => &[20],
        2 => &[11, 9],
        3 => &[9, 7, 4],
        4 => &[8, 6, 4, 2],
        _ => &[7, 6, 4, 2, 1],
    }
}

/// Page id for the `URL:` line that ends every web observation.
fn page_from_observation<'g>(graph: &'g PageGraph, observation: &str) -> Option<&'g str> {
    let url = observation
        .lines()
        .rev()
        .find_map(|line| line.strip_prefix("URL: "))?;
    graph.page_by_url(url.trim()).map(|p| p.id.as_str())
}

pub struct GraphPolicy {
    graph: Arc<PageGraph>,
    task: TaskSpec,
    ledger: Option<Arc<TokenLedger>>,
    pub samples: usize,
    pub breadth: usize,
}

impl GraphPolicy {
    pub fn new(graph: Arc<PageGraph>, task: &TaskSpec) -> Self {
        Self {
            graph,
            task: task.clone(),
            ledger: None,
            samples: 20,
            breadth: 5,
        }
    }

    pub fn with_ledger(mut self, ledger: Arc<TokenLedger>) -> Self {
        self.ledger = Some(ledger);
        self
    }

    fn hint_actions(&self, ctx: &DecisionContext) -> Vec<Action> {
        let page = page_from_observation(&self.graph, &ctx.observation);
        let hints = page
            .and_then(|p| self.task.hints.get(p))
            .cloned()
            .unwrap_or_else(|| vec!["go_back".to_string()]);
        hints
            .iter()
            .filter_map(|h| Action::parse(h).ok())
            .collect()
    }

    /// The prompt the chat-backed policy would send, for token accounting.
    fn prompt_tokens(&self, ctx: &DecisionContext) -> u64 {
        let user = prompts::render(
            prompts::POLICY_USER,
            &[
                ("reflections", &prompts::reflections_block(&ctx.reflections)),
                ("observation", &ctx.observation),
                ("objective", &ctx.goal),
                ("previous_actions", &prompts::previous_actions(&ctx.previous_actions)),
            ],
        );
        approx_tokens(prompts::SYSTEM) + approx_tokens(&user)
    }
}

impl Policy for GraphPolicy {
    fn propose(&self, ctx: &DecisionContext) -> Result<ActionDistribution> {
        let actions = self.hint_actions(ctx);
        if actions.is_empty() {
            return Ok(ActionDistribution::default());
        }
        let counts = hint_counts(actions.len().min(5));
        let mut multiset = Vec::with_capacity(self.samples);
        for (action, &count) in actions.iter().zip(counts) {
            multiset.extend(std::iter::repeat_n(action.clone(), count));
        }
        if let Some(ledger) = &self.ledger {
            let input = self.prompt_tokens(ctx);
            for action in &multiset {
                ledger.record(Purpose::Policy, input, approx_tokens(&action.canonical()));
            }
        }
        aggregate_actions(&multiset, self.breadth)
    }

    fn propose_one(&self, ctx: &DecisionContext) -> Result<Action> {
        let actions = self.hint_actions(ctx);
        let top = actions
            .into_iter()
            .next()
            .ok_or_else(|| Error::Provider("no hint actions for this page".into()))?;
        if let Some(ledger) = &self.ledger {
            let input = self.prompt_tokens(ctx);
            ledger.record(Purpose::Policy, input, approx_tokens(&top.canonical()));
        }
        Ok(top)
    }
}

/// Which chat-value implementation this oracle stands in for; controls the
/// synthetic call records only.
#[derive(Debug, Clone, Copy)]
pub enum ValueCallProfile {
    SingleAgent { samples: usize },
    Debate,
}

pub struct GraphValue {
    graph: Arc<PageGraph>,
    task: TaskSpec,
    noise_sigma: f64,
    rng: Mutex<ChaCha8Rng>,
    ledger: Option<Arc<TokenLedger>>,
    pub profile: ValueCallProfile,
}

impl GraphValue {
    pub fn new(graph: Arc<PageGraph>, task: &TaskSpec, noise_sigma: f64, rng: ChaCha8Rng) -> Self {
        Self {
            graph,
            task: task.clone(),
            noise_sigma,
            rng: Mutex::new(rng),
            ledger: None,
            profile: ValueCallProfile::SingleAgent { samples: 20 },
        }
    }

    pub fn with_ledger(mut self, ledger: Arc<TokenLedger>) -> Self {
        self.ledger = Some(ledger);
        self
    }

    pub fn with_profile(mut self, profile: ValueCallProfile) -> Self {
        self.profile = profile;
        self
    }

    fn ground_truth(&self, ctx: &EvalContext) -> f64 {
        let obs = &ctx.observation;
        if let Some(marker) = &self.task.success_text {
            if obs.contains(marker.as_str()) {
                return 0.95;
            }
        }
        if let Some(rest) = obs.split("Session ended. Final answer:").nth(1) {
            let answer = rest.lines().next().unwrap_or("").trim_end_matches(']').trim();
            let success = match &self.task.eval {
                Evaluator::AnswerMatch { expected } => {
                    normalize_answer(answer) == normalize_answer(expected)
                }
                Evaluator::UrlMatch { expected } => {
                    page_from_observation(&self.graph, obs)
                        .and_then(|p| self.graph.page(p))
                        .map(|p| p.url == *expected)
                        .unwrap_or(false)
                }
                Evaluator::StatePredicate { .. } => false, // handled via success_text
            };
            return if success { 1.0 } else { 0.0 };
        }
        let page = page_from_observation(&self.graph, obs);
        page.and_then(|p| self.task.values.get(p))
            .or_else(|| self.task.values.get("_default"))
            .copied()
            .unwrap_or(0.05)
    }

    fn record_calls(&self, ctx: &EvalContext) {
        let Some(ledger) = &self.ledger else { return };
        let trajectory = prompts::previous_actions(&ctx.action_history);
        let user = prompts::render(
            prompts::VALUE_SINGLE_USER,
            &[
                ("reflections", &prompts::reflections_block(&ctx.reflections)),
                ("objective", &ctx.goal),
                ("trajectory", &trajectory),
                ("last_observation", &ctx.observation),
                ("status_codes", prompts::STATUS_CODES),
            ],
        );
        let input = approx_tokens(prompts::SYSTEM) + approx_tokens(&user);
        match self.profile {
            ValueCallProfile::SingleAgent { samples } => {
                for _ in 0..samples {
                    ledger.record(Purpose::Value, input, 3);
                }
            }
            ValueCallProfile::Debate => {
                // two ~100-word arguments plus a judge verdict
                ledger.record(Purpose::Debate, input, 100);
                ledger.record(Purpose::Debate, input, 100);
                ledger.record(Purpose::Debate, input + 200, 20);
            }
        }
    }
}

impl ValueEstimator for GraphValue {
    fn estimate(&self, ctx: &EvalContext) -> Result<ValueEstimate> {
        self.record_calls(ctx);
        let base = self.ground_truth(ctx);
        let value = if self.noise_sigma > 0.0 {
            let noise: f64 = {
                let mut rng = self.rng.lock().unwrap();
                let n: f64 = rng.sample(StandardNormal);
                n * self.noise_sigma
            };
            (base + noise).clamp(0.0, 1.0)
        } else {
            base
        };
        Ok(ValueEstimate {
            value,
            method: match self.profile {
                ValueCallProfile::SingleAgent { .. } => ValueMethod::SingleAgent,
                ValueCallProfile::Debate => ValueMethod::MultiAgentDebate,
            },
            raw_choices: vec![],
            debate: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::fixture::load_site_str;
    use crate::env::web::WebEnv;
    use crate::env::Environment;
    use crate::seeds::substream;

    const SITE: &str = r#"
        name = "t"
        initial_page = "home"
        [state]
        q = ""
        [tables.s]
        "x" = "hit"
        _default = "home"
        [[pages]]
        id = "home"
        url = "http://t/"
        [[pages.items]]
        id = 1
        kind = "INPUT"
        on_type = ["store:q", "lookup:s:q"]
        [[pages]]
        id = "hit"
        url = "http://t/hit"
        [[pages.items]]
        text = "found it"

        [[tasks]]
        id = "find"
        goal = "find x"
        difficulty = "easy"
        eval = { kind = "url-match", expected = "http://t/hit" }
        [tasks.values]
        home = 0.2
        hit = 0.9
        _default = 0.05
        [tasks.hints]
        home = ["type [1] [x]", "go_back"]
        hit = ["stop []"]
    "#;

    #[test]
    fn policy_reads_hints_for_the_current_page() {
        let graph = load_site_str(SITE).unwrap();
        let task = graph.task("find").unwrap().clone();
        let env = WebEnv::new(graph.clone(), "find").unwrap();
        let policy = GraphPolicy::new(graph, &task);
        let ctx = DecisionContext {
            goal: task.goal.clone(),
            observation: env.observation(),
            ..Default::default()
        };
        let dist = policy.propose(&ctx).unwrap();
        assert_eq!(dist.entries.len(), 2);
        assert_eq!(dist.entries[0].action.canonical(), "type [1] [x]");
        assert_eq!(dist.entries[0].count, 11);
        assert_eq!(dist.entries[1].count, 9);
        assert_eq!(policy.propose_one(&ctx).unwrap().canonical(), "type [1] [x]");
    }

    #[test]
    fn value_tracks_page_ground_truth_and_stop_outcomes() {
        let graph = load_site_str(SITE).unwrap();
        let task = graph.task("find").unwrap().clone();
        let mut env = WebEnv::new(graph.clone(), "find").unwrap();
        let value = GraphValue::new(graph.clone(), &task, 0.0, substream(1, &["v"]));
        let eval = |env: &WebEnv, value: &GraphValue| {
            value
                .estimate(&EvalContext {
                    goal: task.goal.clone(),
                    observation: env.observation(),
                    ..Default::default()
                })
                .unwrap()
                .value
        };
        assert_eq!(eval(&env, &value), 0.2);
        env.step(&Action::parse("type [1] [x]").unwrap()).unwrap();
        assert_eq!(eval(&env, &value), 0.9);
        env.step(&Action::parse("stop []").unwrap()).unwrap();
        assert_eq!(eval(&env, &value), 1.0); // stopped on the expected url
    }

    #[test]
    fn noise_is_seeded_and_clamped() {
        let graph = load_site_str(SITE).unwrap();
        let task = graph.task("find").unwrap().clone();
        let env = WebEnv::new(graph.clone(), "find").unwrap();
        let ctx = EvalContext {
            goal: task.goal.clone(),
            observation: env.observation(),
            ..Default::default()
        };
        let a = GraphValue::new(graph.clone(), &task, 0.2, substream(9, &["v"]));
        let b = GraphValue::new(graph.clone(), &task, 0.2, substream(9, &["v"]));
        let series_a: Vec<f64> = (0..5).map(|_| a.estimate(&ctx).unwrap().value).collect();
        let series_b: Vec<f64> = (0..5).map(|_| b.estimate(&ctx).unwrap().value).collect();
        assert_eq!(series_a, series_b);
        assert!(series_a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(series_a.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn token_simulation_mirrors_call_profiles() {
        let graph = load_site_str(SITE).unwrap();
        let task = graph.task("find").unwrap().clone();
        let env = WebEnv::new(graph.clone(), "find").unwrap();
        let ledger = TokenLedger::new();
        let policy = GraphPolicy::new(graph.clone(), &task).with_ledger(ledger.clone());
        let ctx = DecisionContext {
            goal: task.goal.clone(),
            observation: env.observation(),
            ..Default::default()
        };
        policy.propose(&ctx).unwrap();
        assert_eq!(ledger.call_count(Purpose::Policy), 20);

        let vledger = TokenLedger::new();
        let value = GraphValue::new(graph.clone(), &task, 0.0, substream(1, &["v"]))
            .with_ledger(vledger.clone())
            .with_profile(ValueCallProfile::Debate);
        value
            .estimate(&EvalContext {
                goal: task.goal,
                observation: env.observation(),
                ..Default::default()
            })
            .unwrap();
        assert_eq!(vledger.call_count(Purpose::Debate), 3);
    }
}
