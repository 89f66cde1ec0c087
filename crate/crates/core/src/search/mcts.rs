//! The MCTS loop: selection, expansion, evaluation, back-propagation, and
//! prediction of the best root action.

use super::tree::{SearchTree, TerminalReason, ROOT};
use super::{NodeId, SearchBudget, SearchOptions};
use crate::action::Action;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::policy::{DecisionContext, Policy};
use crate::value::{EvalContext, ValueEstimator};
use std::time::Instant;

/// Immutable episode context shared by every simulation of one search.
pub struct SearchTask<'a> {
    pub task_id: &'a str,
    pub goal: &'a str,
    /// Canonical texts of actions already executed in the real environment.
    pub executed_actions: &'a [String],
}

pub struct SearchOutcome {
    pub best_action: Action,
    pub tree: SearchTree,
}

/// Run MCTS from the environment's current state. The environment is
/// restored to that state before returning, so the caller can execute the
/// chosen action for real.
pub fn run_search(
    env: &mut dyn Environment,
    task: &SearchTask<'_>,
    policy: &dyn Policy,
    value: &dyn ValueEstimator,
    budget: &SearchBudget,
    options: &SearchOptions,
) -> Result<SearchOutcome> {
    budget.validate()?;
    if env.is_done() {
        return Err(Error::Contract("cannot search from a terminal state".into()));
    }
    let root_snapshot = env.snapshot();
    let mut tree = SearchTree::new(
        task.task_id,
        task.goal,
        env.observation(),
        Some(root_snapshot),
    );

    let started = Instant::now();
    let mut simulations = 0usize;
    while simulations < budget.max_nodes {
        if simulations > 0 {
            if let Some(cap) = budget.max_wall_clock {
                if started.elapsed() >= cap {
                    break;
                }
            }
        }
        simulate(env, task, policy, value, budget, options, &mut tree)?;
        simulations += 1;
    }

    env.restore(root_snapshot)?;
    let best_action = tree
        .best_action(options.criterion)
        .cloned()
        .ok_or_else(|| Error::Provider("policy proposed no actions at the search root".into()))?;
    tree.best = Some(best_action.clone());
    Ok(SearchOutcome { best_action, tree })
}

/// One simulation: select a leaf (materializing at most one child state),
/// expand and evaluate it, then back the value up the path.
fn simulate(
    env: &mut dyn Environment,
    task: &SearchTask<'_>,
    policy: &dyn Policy,
    value: &dyn ValueEstimator,
    budget: &SearchBudget,
    options: &SearchOptions,
    tree: &mut SearchTree,
) -> Result<()> {
    let path = tree.select_leaf(options.c_p, budget.depth_limit);
    let leaf = match path.last() {
        None => ROOT,
        Some(&(node_id, edge_idx)) => match tree.node(node_id).edges[edge_idx].child {
            Some(child) => child,
            None => materialize(env, tree, node_id, edge_idx)?,
        },
    };

    let node = tree.node(leaf);
    if !node.expanded && node.terminal.is_none() && node.depth < budget.depth_limit {
        let ctx = DecisionContext {
            goal: task.goal.to_string(),
            observation: node.observation.clone(),
            previous_actions: history(task, tree, &path),
            reflections: Vec::new(),
        };
        let dist = policy.propose(&ctx)?;
        if dist.is_empty() {
            tree.mark_terminal(leaf, TerminalReason::Exhausted);
        } else {
            tree.attach_children(leaf, &dist, budget.breadth_limit);
        }
    }

    let v = match tree.node(leaf).value {
        Some(v) => v,
        None => {
            let ctx = EvalContext {
                goal: task.goal.to_string(),
                action_history: history(task, tree, &path),
                observation: tree.node(leaf).observation.clone(),
                reflections: Vec::new(),
            };
            let est = value.estimate(&ctx)?;
            let v = est.value.clamp(0.0, 1.0);
            tree.set_value(leaf, v);
            v
        }
    };

    tree.backpropagate(&path, v)?;
    tree.log_simulation(path, leaf, v);
    Ok(())
}

/// Step the environment across an unexplored edge and record the resulting
/// state as a new node. Transition failures become terminal children with
/// value 0 so the search can continue.
fn materialize(
    env: &mut dyn Environment,
    tree: &mut SearchTree,
    node_id: NodeId,
    edge_idx: usize,
) -> Result<NodeId> {
    let snapshot = tree
        .node(node_id)
        .snapshot
        .ok_or_else(|| Error::Contract("parent node has no snapshot".into()))?;
    env.restore(snapshot)?;
    let action = tree.node(node_id).edges[edge_idx].action.clone();
    match env.step(&action) {
        Ok(()) => {
            let observation = env.observation();
            let terminal = if env.is_done() {
                if action.is_stop() {
                    Some(TerminalReason::Stop)
                } else {
                    Some(TerminalReason::EnvDone)
                }
            } else {
                None
            };
            let token = env.snapshot();
            Ok(tree.add_child(node_id, edge_idx, observation, Some(token), terminal))
        }
        Err(err) => {
            log::warn!("transition failed during search: {err}");
            let child = tree.add_child(
                node_id,
                edge_idx,
                "[transition failed]".to_string(),
                None,
                Some(TerminalReason::Failed),
            );
            tree.set_value(child, 0.0);
            Ok(child)
        }
    }
}

/// Actions executed so far plus the actions along the current search path.
fn history(task: &SearchTask<'_>, tree: &SearchTree, path: &[(NodeId, usize)]) -> Vec<String> {
    let mut actions: Vec<String> = task.executed_actions.to_vec();
    for &(node_id, edge_idx) in path {
        actions.push(tree.node(node_id).edges[edge_idx].action.canonical());
    }
    actions
}
