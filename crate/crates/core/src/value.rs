//! Value functions: single-agent multiple-choice averaging and
//! multi-agent-debate judging.

use crate::error::{Error, Result};
use crate::prompts::{self, RenderedReflection};
use crate::provider::{ChatMessage, ChatProvider, ChatRequest, Purpose};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// What a value function may look at when scoring a state.
#[derive(Debug, Clone, Default)]
pub struct EvalContext {
    pub goal: String,
    /// Canonical texts of actions taken so far (executed + search path).
    pub action_history: Vec<String>,
    /// Observation of the state being evaluated (URL on the last line).
    pub observation: String,
    pub reflections: Vec<RenderedReflection>,
}

impl EvalContext {
    fn trajectory_text(&self) -> String {
        prompts::previous_actions(&self.action_history)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueMethod {
    SingleAgent,
    MultiAgentDebate,
}

#[derive(Debug, Clone)]
pub struct DebateTranscript {
    pub con_argument: String,
    pub pro_argument: String,
    pub judge_text: String,
}

#[derive(Debug, Clone)]
pub struct ValueEstimate {
    pub value: f64,
    pub method: ValueMethod,
    pub raw_choices: Vec<char>,
    pub debate: Option<DebateTranscript>,
}

/// Mapping from status-code letters A..E to numeric values. The default is
/// a uniform grid from 1.0 down to 0.0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChoiceGrid {
    pub values: [f64; 5],
}

impl Default for ChoiceGrid {
    fn default() -> Self {
        Self {
            values: [1.0, 0.75, 0.5, 0.25, 0.0],
        }
    }
}

impl ChoiceGrid {
    pub fn value_of(&self, choice: char) -> Result<f64> {
        let idx = match choice.to_ascii_uppercase() {
            'A' => 0,
            'B' => 1,
            'C' => 2,
            'D' => 3,
            'E' => 4,
            other => {
                return Err(Error::Parse(format!(
                    "status code `{other}` is not one of A..E"
                )))
            }
        };
        Ok(self.values[idx])
    }
}

/// Convert a status-code letter into its numeric value on the default grid.
pub fn choice_to_value(choice: char) -> Result<f64> {
    ChoiceGrid::default().value_of(choice)
}

/// Pull the chosen letter out of a response. Accepts a `STATUS CODE: X`
/// line (last occurrence wins) or a bare letter response.
pub fn parse_choice(text: &str) -> Result<char> {
    if let Some(pos) = text.rfind("STATUS CODE") {
        let tail = &text[pos + "STATUS CODE".len()..];
        for c in tail.chars() {
            if c.is_ascii_alphabetic() {
                return ensure_choice(c);
            }
            if !(c.is_whitespace() || c == ':' || c == '*' || c == '`') {
                break;
            }
        }
    }
    let trimmed = text.trim().trim_matches(|c: char| c == '`' || c == '*' || c == '.');
    let mut chars = trimmed.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        return ensure_choice(c);
    }
    Err(Error::Parse(format!(
        "no status code found in response: {}",
        text.chars().take(80).collect::<String>()
    )))
}

fn ensure_choice(c: char) -> Result<char> {
    let up = c.to_ascii_uppercase();
    if ('A'..='E').contains(&up) {
        Ok(up)
    } else {
        Err(Error::Parse(format!("status code `{c}` is not one of A..E")))
    }
}

pub trait ValueEstimator: Send + Sync {
    fn estimate(&self, ctx: &EvalContext) -> Result<ValueEstimate>;
}

impl<V: ValueEstimator + ?Sized> ValueEstimator for Box<V> {
    fn estimate(&self, ctx: &EvalContext) -> Result<ValueEstimate> {
        (**self).estimate(ctx)
    }
}

/// Single-agent value: sample `k` multiple-choice responses and return the
/// mean of their grid values.
pub struct SingleAgentValue {
    provider: Arc<dyn ChatProvider>,
    pub samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub grid: ChoiceGrid,
}

impl SingleAgentValue {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            samples: 20,
            temperature: 1.0,
            top_p: 0.95,
            grid: ChoiceGrid::default(),
        }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    fn request(&self, ctx: &EvalContext) -> ChatRequest {
        let reflections = prompts::reflections_block(&ctx.reflections);
        let user = prompts::render(
            prompts::VALUE_SINGLE_USER,
            &[
                ("reflections", &reflections),
                ("objective", &ctx.goal),
                ("trajectory", &ctx.trajectory_text()),
                ("last_observation", &ctx.observation),
                ("status_codes", prompts::STATUS_CODES),
            ],
        );
        let mut req = ChatRequest::new(
            Purpose::Value,
            vec![prompts::system_message(), ChatMessage::user(user)],
        );
        req.temperature = self.temperature;
        req.top_p = self.top_p;
        req
    }
}

impl ValueEstimator for SingleAgentValue {
    fn estimate(&self, ctx: &EvalContext) -> Result<ValueEstimate> {
        if ctx.observation.is_empty() {
            return Err(Error::Contract("evaluation context has no observation".into()));
        }
        let req = self.request(ctx);
        let mut choices = Vec::with_capacity(self.samples);
        for _ in 0..self.samples {
            let resp = self.provider.chat_complete(&req)?;
            if let Ok(choice) = parse_choice(&resp.text) {
                choices.push(choice);
            }
        }
        if choices.is_empty() {
            return Err(Error::Parse(format!(
                "none of {} value responses contained a status code",
                self.samples
            )));
        }
        let sum: f64 = choices
            .iter()
            .map(|&c| self.grid.value_of(c))
            .sum::<Result<f64>>()?;
        Ok(ValueEstimate {
            value: sum / choices.len() as f64,
            method: ValueMethod::SingleAgent,
            raw_choices: choices,
            debate: None,
        })
    }
}

/// Multi-agent-debate value: one call argues the agent is off track, one
/// argues it is on track, and a judge converts both into a status code.
/// Exactly three calls absent retries; an unparseable judge gets one retry.
pub struct DebateValue {
    provider: Arc<dyn ChatProvider>,
    pub grid: ChoiceGrid,
}

impl DebateValue {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            grid: ChoiceGrid::default(),
        }
    }

    fn argument_request(&self, ctx: &EvalContext, template: &str) -> ChatRequest {
        let reflections = prompts::reflections_block(&ctx.reflections);
        let user = prompts::render(
            template,
            &[
                ("reflections", &reflections),
                ("objective", &ctx.goal),
                ("trajectory", &ctx.trajectory_text()),
                ("last_observation", &ctx.observation),
            ],
        );
        ChatRequest::new(
            Purpose::Debate,
            vec![prompts::system_message(), ChatMessage::user(user)],
        )
    }

    fn judge_request(&self, ctx: &EvalContext, con: &str, pro: &str) -> ChatRequest {
        let reflections = prompts::reflections_block(&ctx.reflections);
        let user = prompts::render(
            prompts::DEBATE_JUDGE_USER,
            &[
                ("reflections", &reflections),
                ("objective", &ctx.goal),
                ("trajectory", &ctx.trajectory_text()),
                ("last_observation", &ctx.observation),
                ("con_argument", con),
                ("pro_argument", pro),
                ("status_codes", prompts::STATUS_CODES),
            ],
        );
        ChatRequest::new(
            Purpose::Debate,
            vec![prompts::system_message(), ChatMessage::user(user)],
        )
    }
}

impl ValueEstimator for DebateValue {
    fn estimate(&self, ctx: &EvalContext) -> Result<ValueEstimate> {
        if ctx.observation.is_empty() {
            return Err(Error::Contract("evaluation context has no observation".into()));
        }
        let con = self
            .provider
            .chat_complete(&self.argument_request(ctx, prompts::DEBATE_CON_USER))?
            .text;
        let pro = self
            .provider
            .chat_complete(&self.argument_request(ctx, prompts::DEBATE_PRO_USER))?
            .text;
        let judge_req = self.judge_request(ctx, &con, &pro);
        let mut judge_text = self.provider.chat_complete(&judge_req)?.text;
        let choice = match parse_choice(&judge_text) {
            Ok(c) => c,
            Err(_) => {
                // one retry, then give up
                judge_text = self.provider.chat_complete(&judge_req)?.text;
                parse_choice(&judge_text)?
            }
        };
        Ok(ValueEstimate {
            value: self.grid.value_of(choice)?,
            method: ValueMethod::MultiAgentDebate,
            raw_choices: vec![choice],
            debate: Some(DebateTranscript {
                con_argument: con,
                pro_argument: pro,
                judge_text,
            }),
        })
    }
}

/// Table-driven value function for tests: value keyed by an observation
/// substring (first matching rule wins), with a default.
#[derive(Debug, Clone)]
pub struct ScriptedValue {
    rules: Vec<(String, f64)>,
    pub default: f64,
}

impl ScriptedValue {
    pub fn new(default: f64) -> Self {
        Self { rules: Vec::new(), default }
    }

    pub fn when(mut self, obs_contains: impl Into<String>, value: f64) -> Self {
        self.rules.push((obs_contains.into(), value));
        self
    }
}

impl ValueEstimator for ScriptedValue {
    fn estimate(&self, ctx: &EvalContext) -> Result<ValueEstimate> {
        let value = self
            .rules
            .iter()
            .find(|(needle, _)| ctx.observation.contains(needle.as_str()))
            .map(|(_, v)| *v)
            .unwrap_or(self.default);
        Ok(ValueEstimate {
            value,
            method: ValueMethod::SingleAgent,
            raw_choices: vec![],
            debate: None,
        })
    }
}
