//! Episode trajectories: alternating observations and actions for one task.

use crate::action::Action;
use crate::error::{Error, Result};
use crate::provider::LedgerRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// Observation the agent saw before acting.
    pub observation: String,
    /// Action executed in the real environment.
    pub action: Action,
    /// Search estimate of the executed action's success (root-edge Q),
    /// absent for agents that do not search.
    pub value_estimate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub goal: String,
    /// Goal image references; carried through artifacts but unused by the
    /// text-only mock environment.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub image_refs: Vec<String>,
    /// Agent label that produced this trajectory (artifact bookkeeping).
    pub agent: String,
    pub steps: Vec<TrajectoryStep>,
    /// Observation returned after the last executed action.
    pub final_observation: Option<String>,
    pub reward: Option<f64>,
    /// Per-call token usage recorded during the episode.
    pub token_usage: Vec<LedgerRecord>,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>, goal: impl Into<String>, agent: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            goal: goal.into(),
            image_refs: Vec::new(),
            agent: agent.into(),
            steps: Vec::new(),
            final_observation: None,
            reward: None,
            token_usage: Vec::new(),
        }
    }

    pub fn executed_actions(&self) -> Vec<&Action> {
        self.steps.iter().map(|s| &s.action).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Structural invariants: at most one `stop`, and only in last position.
    /// (Observation/action alternation holds by construction of `steps`.)
    pub fn validate(&self) -> Result<()> {
        for (i, step) in self.steps.iter().enumerate() {
            if step.action.is_stop() && i + 1 != self.steps.len() {
                return Err(Error::Contract(format!(
                    "stop action at step {i} is not the last step"
                )));
            }
            if let Some(v) = step.value_estimate {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Contract(format!(
                        "value estimate {v} at step {i} is outside [0,1]"
                    )));
                }
            }
        }
        Ok(())
    }
}
