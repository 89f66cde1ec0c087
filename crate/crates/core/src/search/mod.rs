//! Search algorithms over pluggable policies, value functions, and
//! environments: PUCT-guided MCTS plus the ReACT, tree-of-thought, and
//! best-first baselines.

pub mod baselines;
pub mod mcts;
pub mod tree;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::time::Duration;

pub use tree::{NodeId, SearchTree, SelectionCriterion, Simulation, TerminalReason, ROOT};

/// Limits for one search tree. The search halts when either the node budget
/// or the wall clock is exhausted, whichever comes first; the clock is
/// checked between simulations so trees stay internally consistent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Simulations per tree; each simulation expands at most one node.
    pub max_nodes: usize,
    /// Wall-clock cap per search; `None` disables the cap (budget sweeps).
    pub max_wall_clock: Option<Duration>,
    /// Depth limit d: maximum path length from the root.
    pub depth_limit: usize,
    /// Breadth limit b: maximum children per node.
    pub breadth_limit: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            max_nodes: 5,
            max_wall_clock: Some(Duration::from_secs(300)),
            depth_limit: 5,
            breadth_limit: 5,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        if self.max_nodes == 0 {
            return Err(Error::Config("max_nodes must be >= 1".into()));
        }
        if self.depth_limit == 0 {
            return Err(Error::Config("depth_limit must be >= 1".into()));
        }
        if self.breadth_limit == 0 {
            return Err(Error::Config("breadth_limit must be >= 1".into()));
        }
        if let Some(cap) = self.max_wall_clock {
            if cap.is_zero() {
                return Err(Error::Config("max_wall_clock must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn with_nodes(mut self, max_nodes: usize) -> Self {
        self.max_nodes = max_nodes;
        self
    }

    pub fn without_wall_clock(mut self) -> Self {
        self.max_wall_clock = None;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Exploration constant c_p in the PUCT bound.
    pub c_p: f64,
    pub criterion: SelectionCriterion,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            c_p: 1.0,
            criterion: SelectionCriterion::MostVisited,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_standard_parameters() {
        let budget = SearchBudget::default();
        assert_eq!(budget.max_nodes, 5);
        assert_eq!(budget.depth_limit, 5);
        assert_eq!(budget.breadth_limit, 5);
        assert_eq!(budget.max_wall_clock, Some(Duration::from_secs(300)));
        let options = SearchOptions::default();
        assert_eq!(options.c_p, 1.0);
        assert_eq!(options.criterion, SelectionCriterion::MostVisited);
    }

    #[test]
    fn budget_validation_rejects_zeros() {
        assert!(SearchBudget::default().validate().is_ok());
        assert!(SearchBudget { max_nodes: 0, ..Default::default() }.validate().is_err());
        assert!(SearchBudget { depth_limit: 0, ..Default::default() }.validate().is_err());
        assert!(SearchBudget { breadth_limit: 0, ..Default::default() }.validate().is_err());
    }
}
