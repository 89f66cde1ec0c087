//! Episode execution: run a task with any agent kind (direct prompting or
//! search-augmented), then optionally reflect on the finished episode and
//! store the lessons for future tasks.

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::policy::{DecisionContext, Policy};
use crate::reflection::{
    attribute_policy_errors, attribute_value_errors, generate_policy_reflection,
    generate_value_reflection, RetrievalConfig, SharedStore,
};
use crate::search::baselines::{best_first_search, react_step, tot_search, TotMode};
use crate::search::mcts::{run_search, SearchOutcome, SearchTask};
use crate::search::{SearchBudget, SearchOptions, SearchTree};
use crate::trajectory::{Trajectory, TrajectoryStep};
use crate::value::ValueEstimator;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    React,
    TotBfs,
    TotDfs,
    BestFirst,
    Mcts,
    RMcts,
    RMctsMad,
}

impl AgentKind {
    pub fn parse(s: &str) -> Result<AgentKind> {
        match s.trim().to_lowercase().as_str() {
            "react" => Ok(AgentKind::React),
            "tot-bfs" => Ok(AgentKind::TotBfs),
            "tot-dfs" => Ok(AgentKind::TotDfs),
            "best-first" => Ok(AgentKind::BestFirst),
            "mcts" => Ok(AgentKind::Mcts),
            "rmcts" => Ok(AgentKind::RMcts),
            "rmcts-mad" => Ok(AgentKind::RMctsMad),
            other => Err(Error::Config(format!("unknown agent kind `{other}`"))),
        }
    }

    pub fn uses_search(&self) -> bool {
        !matches!(self, AgentKind::React)
    }

    pub fn uses_reflection(&self) -> bool {
        matches!(self, AgentKind::RMcts | AgentKind::RMctsMad)
    }

    /// ReACT runs long episodes; search agents stop after 5 actions.
    pub fn default_max_steps(&self) -> usize {
        if self.uses_search() {
            5
        } else {
            20
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AgentKind::React => "react",
            AgentKind::TotBfs => "tot-bfs",
            AgentKind::TotDfs => "tot-dfs",
            AgentKind::BestFirst => "best-first",
            AgentKind::Mcts => "mcts",
            AgentKind::RMcts => "rmcts",
            AgentKind::RMctsMad => "rmcts-mad",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionToggles {
    pub policy: bool,
    pub value: bool,
}

impl ReflectionToggles {
    pub fn off() -> Self {
        Self { policy: false, value: false }
    }
    pub fn on() -> Self {
        Self { policy: true, value: true }
    }
}

/// Per-agent behavior knobs resolved from the experiment config.
#[derive(Debug, Clone)]
pub struct AgentSettings {
    pub kind: AgentKind,
    pub budget: SearchBudget,
    pub options: SearchOptions,
    pub max_steps: usize,
    /// Ablation toggle: with search disabled, every agent reduces to greedy
    /// single-call stepping (the ReACT path) using the same policy.
    pub search_enabled: bool,
    pub reflection: ReflectionToggles,
    pub retrieval: RetrievalConfig,
    /// Reflection targets per finished episode.
    pub policy_reflections_per_episode: usize,
    pub value_reflections_per_episode: usize,
}

impl AgentSettings {
    pub fn new(kind: AgentKind) -> Self {
        Self {
            kind,
            budget: SearchBudget::default(),
            options: SearchOptions::default(),
            max_steps: kind.default_max_steps(),
            search_enabled: kind.uses_search(),
            reflection: if kind.uses_reflection() {
                ReflectionToggles::on()
            } else {
                ReflectionToggles::off()
            },
            retrieval: RetrievalConfig::default(),
            policy_reflections_per_episode: 3,
            value_reflections_per_episode: 1,
        }
    }
}

#[derive(Debug)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    /// One search tree per executed step (empty for no-search agents).
    pub trees: Vec<SearchTree>,
    pub reward: f64,
}

/// Run one episode: search (or greedy-step), execute the chosen action in
/// the real environment, re-root, and repeat until `stop` or the step cap.
pub fn run_episode(
    env: &mut dyn Environment,
    task_id: &str,
    goal: &str,
    policy: &dyn Policy,
    value: &dyn ValueEstimator,
    settings: &AgentSettings,
) -> Result<EpisodeResult> {
    let mut trajectory = Trajectory::new(task_id, goal, settings.kind.to_string());
    let mut trees: Vec<SearchTree> = Vec::new();
    let mut executed: Vec<String> = Vec::new();

    for _ in 0..settings.max_steps {
        if env.is_done() {
            break;
        }
        let observation = env.observation();
        let task = SearchTask {
            task_id,
            goal,
            executed_actions: &executed,
        };
        let (action, tree) = if settings.search_enabled && settings.kind.uses_search() {
            let SearchOutcome { best_action, tree } = match settings.kind {
                AgentKind::TotBfs => tot_search(
                    TotMode::Bfs,
                    env,
                    &task,
                    policy,
                    value,
                    &settings.budget,
                )?,
                AgentKind::TotDfs => tot_search(
                    TotMode::Dfs,
                    env,
                    &task,
                    policy,
                    value,
                    &settings.budget,
                )?,
                AgentKind::BestFirst => {
                    best_first_search(env, &task, policy, value, &settings.budget)?
                }
                _ => run_search(env, &task, policy, value, &settings.budget, &settings.options)?,
            };
            (best_action, Some(tree))
        } else {
            let ctx = DecisionContext {
                goal: goal.to_string(),
                observation: observation.clone(),
                previous_actions: executed.clone(),
                reflections: Vec::new(),
            };
            (react_step(policy, &ctx)?, None)
        };

        env.step(&action)?;
        let value_estimate = tree.as_ref().and_then(|t| t.root_q(&action));
        trajectory.steps.push(TrajectoryStep {
            observation,
            action: action.clone(),
            value_estimate,
        });
        executed.push(action.canonical());
        if let Some(tree) = tree {
            trees.push(tree);
        }
        if action.is_stop() {
            break;
        }
    }

    trajectory.final_observation = Some(env.observation());
    let reward = env.reward();
    trajectory.reward = Some(reward);
    trajectory.validate()?;
    Ok(EpisodeResult {
        trajectory,
        trees,
        reward,
    })
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ImprovementSummary {
    pub policy_reflections: usize,
    pub value_reflections: usize,
}

/// The improvement loop: attribute the episode's most erroneous actions and
/// estimates, generate contrastive reflections, and store them. Reflection
/// runs after every episode regardless of reward; provider failures skip
/// the affected reflection with a warning.
pub fn improve_from_episode(
    result: &EpisodeResult,
    settings: &AgentSettings,
    provider: &dyn crate::provider::ChatProvider,
    embedder: &dyn crate::provider::EmbeddingProvider,
    policy_store: &SharedStore,
    value_store: &SharedStore,
) -> Result<ImprovementSummary> {
    let mut summary = ImprovementSummary::default();
    let token_limit = settings.retrieval.token_limit;
    if settings.reflection.policy {
        let targets = attribute_policy_errors(
            &result.trajectory,
            &result.trees,
            settings.policy_reflections_per_episode,
        );
        for (t, _) in targets {
            match generate_policy_reflection(&result.trajectory, t, provider, embedder, token_limit)
            {
                Ok(reflection) => {
                    policy_store.write().unwrap().add(reflection)?;
                    summary.policy_reflections += 1;
                }
                Err(err) => log::warn!("policy reflection for step {t} skipped: {err}"),
            }
        }
    }
    if settings.reflection.value {
        let targets = attribute_value_errors(
            &result.trajectory,
            &result.trees,
            settings.value_reflections_per_episode,
        );
        for (t, _) in targets {
            match generate_value_reflection(&result.trajectory, t, provider, embedder, token_limit)
            {
                Ok(reflection) => {
                    value_store.write().unwrap().add(reflection)?;
                    summary.value_reflections += 1;
                }
                Err(err) => log::warn!("value reflection for step {t} skipped: {err}"),
            }
        }
    }
    Ok(summary)
}
