//! Baseline searchers: single-step ReACT, breadth/depth-limited
//! tree-of-thought exploration, and best-first (A*-style) search.

use super::mcts::{SearchOutcome, SearchTask};
use super::tree::{SearchTree, ROOT};
use super::{NodeId, SearchBudget};
use crate::action::Action;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::policy::{DecisionContext, Policy};
use crate::value::{EvalContext, ValueEstimator};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::time::Instant;

/// One greedy policy step: no search, the value function is unused.
pub fn react_step(policy: &dyn Policy, ctx: &DecisionContext) -> Result<Action> {
    policy.propose_one(ctx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TotMode {
    Bfs,
    Dfs,
}

struct Explorer<'a> {
    env: &'a mut dyn Environment,
    task: &'a SearchTask<'a>,
    policy: &'a dyn Policy,
    value: &'a dyn ValueEstimator,
    budget: &'a SearchBudget,
    tree: SearchTree,
    evaluations: usize,
    started: Instant,
}

impl<'a> Explorer<'a> {
    fn new(
        env: &'a mut dyn Environment,
        task: &'a SearchTask<'a>,
        policy: &'a dyn Policy,
        value: &'a dyn ValueEstimator,
        budget: &'a SearchBudget,
    ) -> Result<Self> {
        budget.validate()?;
        if env.is_done() {
            return Err(Error::Contract("cannot search from a terminal state".into()));
        }
        let snapshot = env.snapshot();
        let tree = SearchTree::new(task.task_id, task.goal, env.observation(), Some(snapshot));
        Ok(Self {
            env,
            task,
            policy,
            value,
            budget,
            tree,
            evaluations: 0,
            started: Instant::now(),
        })
    }

    fn out_of_budget(&self) -> bool {
        if self.evaluations >= self.budget.max_nodes {
            return true;
        }
        if self.evaluations > 0 {
            if let Some(cap) = self.budget.max_wall_clock {
                if self.started.elapsed() >= cap {
                    return true;
                }
            }
        }
        false
    }

    fn path_actions(&self, node: NodeId) -> Vec<String> {
        let mut reversed = Vec::new();
        let mut current = node;
        while let Some((parent, edge_idx)) = self.tree.node(current).parent {
            reversed.push(self.tree.node(parent).edges[edge_idx].action.canonical());
            current = parent;
        }
        let mut actions: Vec<String> = self.task.executed_actions.to_vec();
        actions.extend(reversed.into_iter().rev());
        actions
    }

    fn edge_path(&self, node: NodeId) -> Vec<(NodeId, usize)> {
        let mut reversed = Vec::new();
        let mut current = node;
        while let Some((parent, edge_idx)) = self.tree.node(current).parent {
            reversed.push((parent, edge_idx));
            current = parent;
        }
        reversed.reverse();
        reversed
    }

    /// Evaluate a node once, caching the value and mirroring it onto the
    /// edge that leads there.
    fn evaluate(&mut self, node: NodeId) -> Result<f64> {
        self.evaluations += 1;
        if let Some(v) = self.tree.node(node).value {
            return Ok(v);
        }
        let ctx = EvalContext {
            goal: self.task.goal.to_string(),
            action_history: self.path_actions(node),
            observation: self.tree.node(node).observation.clone(),
            reflections: Vec::new(),
        };
        let v = self.value.estimate(&ctx)?.value.clamp(0.0, 1.0);
        self.tree.set_value(node, v);
        if let Some((parent, edge_idx)) = self.tree.node(node).parent {
            let edge = &mut self.tree.node_mut(parent).edges[edge_idx];
            edge.visits = 1;
            edge.q = v;
        }
        Ok(v)
    }

    /// Expand a node with the policy and materialize every child state.
    /// Returns the new child ids in proposal (descending-prior) order.
    fn expand(&mut self, node: NodeId) -> Result<Vec<NodeId>> {
        let n = self.tree.node(node);
        if n.expanded || n.terminal.is_some() || n.depth >= self.budget.depth_limit {
            return Ok(Vec::new());
        }
        let ctx = DecisionContext {
            goal: self.task.goal.to_string(),
            observation: n.observation.clone(),
            previous_actions: self.path_actions(node),
            reflections: Vec::new(),
        };
        let dist = self.policy.propose(&ctx)?;
        if dist.is_empty() {
            self.tree
                .mark_terminal(node, super::tree::TerminalReason::Exhausted);
            return Ok(Vec::new());
        }
        self.tree
            .attach_children(node, &dist, self.budget.breadth_limit);
        let mut children = Vec::new();
        for edge_idx in 0..self.tree.node(node).edges.len() {
            children.push(self.materialize(node, edge_idx)?);
        }
        Ok(children)
    }

    fn materialize(&mut self, node: NodeId, edge_idx: usize) -> Result<NodeId> {
        use super::tree::TerminalReason;
        let snapshot = self
            .tree
            .node(node)
            .snapshot
            .ok_or_else(|| Error::Contract("parent node has no snapshot".into()))?;
        self.env.restore(snapshot)?;
        let action = self.tree.node(node).edges[edge_idx].action.clone();
        match self.env.step(&action) {
            Ok(()) => {
                let observation = self.env.observation();
                let terminal = if self.env.is_done() {
                    if action.is_stop() {
                        Some(TerminalReason::Stop)
                    } else {
                        Some(TerminalReason::EnvDone)
                    }
                } else {
                    None
                };
                let token = self.env.snapshot();
                Ok(self
                    .tree
                    .add_child(node, edge_idx, observation, Some(token), terminal))
            }
            Err(err) => {
                log::warn!("transition failed during search: {err}");
                let child = self.tree.add_child(
                    node,
                    edge_idx,
                    "[transition failed]".to_string(),
                    None,
                    Some(TerminalReason::Failed),
                );
                self.tree.set_value(child, 0.0);
                Ok(child)
            }
        }
    }

    /// Highest-value evaluated node (root excluded; ties keep the smallest
    /// node id), mapped to its root action. Falls back to the first root
    /// edge when nothing below the root was evaluated.
    fn finish(mut self) -> Result<SearchOutcome> {
        let root_snapshot = self.tree.node(ROOT).snapshot.expect("root snapshot");
        self.env.restore(root_snapshot)?;
        let mut best: Option<(f64, NodeId)> = None;
        for (id, node) in self.tree.nodes() {
            if id == ROOT {
                continue;
            }
            if let Some(v) = node.value {
                let better = match best {
                    None => true,
                    Some((bv, _)) => v > bv,
                };
                if better {
                    best = Some((v, id));
                }
            }
        }
        let best_action = match best {
            Some((_, id)) => {
                let (root_edge, _) = *self
                    .edge_path(id)
                    .first()
                    .expect("non-root node has a path");
                debug_assert_eq!(root_edge, ROOT);
                let edge_idx = self.edge_path(id)[0].1;
                self.tree.node(ROOT).edges[edge_idx].action.clone()
            }
            None => self
                .tree
                .node(ROOT)
                .edges
                .first()
                .map(|e| e.action.clone())
                .ok_or_else(|| {
                    Error::Provider("policy proposed no actions at the search root".into())
                })?,
        };
        self.tree.best = Some(best_action.clone());
        Ok(SearchOutcome {
            best_action,
            tree: self.tree,
        })
    }
}

/// Tree-of-thought exploration: visit frontier nodes in BFS or DFS order,
/// evaluating each visited node and expanding it until the budget runs out,
/// then return the root action leading to the highest-value node seen.
pub fn tot_search(
    mode: TotMode,
    env: &mut dyn Environment,
    task: &SearchTask<'_>,
    policy: &dyn Policy,
    value: &dyn ValueEstimator,
    budget: &SearchBudget,
) -> Result<SearchOutcome> {
    let mut explorer = Explorer::new(env, task, policy, value, budget)?;
    let mut frontier: VecDeque<NodeId> = VecDeque::new();
    frontier.push_back(ROOT);
    while !explorer.out_of_budget() {
        let node = match mode {
            TotMode::Bfs => frontier.pop_front(),
            TotMode::Dfs => frontier.pop_back(),
        };
        let Some(node) = node else { break };
        let v = explorer.evaluate(node)?;
        let path = explorer.edge_path(node);
        explorer.tree.log_simulation(path, node, v);
        let children = explorer.expand(node)?;
        match mode {
            TotMode::Bfs => frontier.extend(children),
            // push in reverse so the highest-prior child pops first
            TotMode::Dfs => frontier.extend(children.into_iter().rev()),
        }
    }
    explorer.finish()
}

#[derive(PartialEq)]
struct Scored {
    value: f64,
    seq: usize,
    node: NodeId,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on value; ties pop the earliest-pushed node first
        self.value
            .partial_cmp(&other.value)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Best-first search: children are evaluated when generated and the
/// globally highest-value frontier node is expanded next.
pub fn best_first_search(
    env: &mut dyn Environment,
    task: &SearchTask<'_>,
    policy: &dyn Policy,
    value: &dyn ValueEstimator,
    budget: &SearchBudget,
) -> Result<SearchOutcome> {
    let mut explorer = Explorer::new(env, task, policy, value, budget)?;
    let mut heap: BinaryHeap<Scored> = BinaryHeap::new();
    let mut seq = 0usize;
    let root_value = explorer.evaluate(ROOT)?;
    heap.push(Scored {
        value: root_value,
        seq,
        node: ROOT,
    });
    while let Some(popped) = heap.pop() {
        if explorer.out_of_budget() {
            break;
        }
        let path = explorer.edge_path(popped.node);
        explorer
            .tree
            .log_simulation(path, popped.node, popped.value);
        let children = explorer.expand(popped.node)?;
        for child in children {
            if explorer.out_of_budget() {
                break;
            }
            let v = explorer.evaluate(child)?;
            seq += 1;
            heap.push(Scored {
                value: v,
                seq,
                node: child,
            });
        }
    }
    explorer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::scripted::{ScriptedEnv, ScriptedEnvSpec};
    use crate::policy::ScriptedPolicy;
    use crate::value::ScriptedValue;
    use std::sync::Arc;

    fn task<'a>() -> SearchTask<'a> {
        SearchTask { task_id: "t", goal: "g", executed_actions: &[] }
    }

    /// Two-level environment: a and b at the root, each with two children.
    fn two_level_env() -> ScriptedEnv {
        let mut spec = ScriptedEnvSpec::default();
        spec.actions
            .insert("".into(), vec!["click [1]".into(), "click [2]".into()]);
        spec.actions
            .insert("click [1]".into(), vec!["click [3]".into(), "click [4]".into()]);
        spec.actions
            .insert("click [2]".into(), vec!["click [5]".into(), "click [6]".into()]);
        ScriptedEnv::new(Arc::new(spec))
    }

    fn two_level_policy() -> ScriptedPolicy {
        ScriptedPolicy::new()
            .when("state: root", vec![("click [1]", 11), ("click [2]", 9)])
            .when("state: click [1]\n", vec![("click [3]", 11), ("click [4]", 9)])
            .when("state: click [2]\n", vec![("click [5]", 11), ("click [6]", 9)])
            .when("state: click", vec![("stop [x]", 20)])
    }

    #[test]
    fn react_step_returns_the_policy_top_action() {
        let policy = ScriptedPolicy::new().when("obs", vec![("click [7]", 12), ("click [8]", 8)]);
        let ctx = DecisionContext {
            goal: "g".into(),
            observation: "obs".into(),
            ..Default::default()
        };
        assert_eq!(react_step(&policy, &ctx).unwrap().canonical(), "click [7]");
    }

    #[test]
    fn tot_bfs_returns_the_root_ancestor_of_the_deep_max() {
        // deep child under the lower-prior arm carries the max value
        let mut env = two_level_env();
        let policy = two_level_policy();
        let value = ScriptedValue::new(0.3).when("state: click [2]/click [6]", 0.95);
        let budget = SearchBudget {
            max_nodes: 16,
            max_wall_clock: None,
            depth_limit: 2,
            breadth_limit: 5,
        };
        let outcome =
            tot_search(TotMode::Bfs, &mut env, &task(), &policy, &value, &budget).unwrap();
        assert_eq!(outcome.best_action.canonical(), "click [2]");
    }

    #[test]
    fn tot_bfs_visits_in_fifo_order_under_uniform_value() {
        let mut env = two_level_env();
        let policy = two_level_policy();
        let value = ScriptedValue::new(0.5);
        let budget = SearchBudget {
            max_nodes: 7,
            max_wall_clock: None,
            depth_limit: 2,
            breadth_limit: 5,
        };
        let outcome =
            tot_search(TotMode::Bfs, &mut env, &task(), &policy, &value, &budget).unwrap();
        let visited: Vec<String> = outcome
            .tree
            .sims
            .iter()
            .map(|s| outcome.tree.node(s.evaluated).observation.clone())
            .collect();
        let states: Vec<&str> = visited
            .iter()
            .map(|o| o.lines().next().unwrap().trim_start_matches("state: "))
            .collect();
        assert_eq!(
            states,
            vec![
                "root",
                "click [1]",
                "click [2]",
                "click [1]/click [3]",
                "click [1]/click [4]",
                "click [2]/click [5]",
                "click [2]/click [6]",
            ]
        );
    }

    #[test]
    fn tot_dfs_visits_in_lifo_order_under_uniform_value() {
        let mut env = two_level_env();
        let policy = two_level_policy();
        let value = ScriptedValue::new(0.5);
        let budget = SearchBudget {
            max_nodes: 7,
            max_wall_clock: None,
            depth_limit: 2,
            breadth_limit: 5,
        };
        let outcome =
            tot_search(TotMode::Dfs, &mut env, &task(), &policy, &value, &budget).unwrap();
        let states: Vec<String> = outcome
            .tree
            .sims
            .iter()
            .map(|s| {
                outcome
                    .tree
                    .node(s.evaluated)
                    .observation
                    .lines()
                    .next()
                    .unwrap()
                    .trim_start_matches("state: ")
                    .to_string()
            })
            .collect();
        assert_eq!(
            states,
            vec![
                "root",
                "click [1]",
                "click [1]/click [3]",
                "click [1]/click [4]",
                "click [2]",
                "click [2]/click [5]",
                "click [2]/click [6]",
            ]
        );
    }

    #[test]
    fn best_first_expands_in_descending_value_order() {
        let mut env = two_level_env();
        let policy = two_level_policy();
        let value = ScriptedValue::new(0.1)
            .when("state: click [1]\n", 0.4)
            .when("state: click [2]\n", 0.8)
            .when("state: click [2]/click [5]", 0.2)
            .when("state: click [2]/click [6]", 0.3);
        let budget = SearchBudget {
            max_nodes: 32,
            max_wall_clock: None,
            depth_limit: 2,
            breadth_limit: 5,
        };
        let outcome = best_first_search(&mut env, &task(), &policy, &value, &budget).unwrap();
        let pop_values: Vec<f64> = outcome.tree.sims.iter().map(|s| s.value).collect();
        // root first, then strictly by descending value
        let mut sorted = pop_values[1..].to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(&pop_values[1..], sorted.as_slice());
        assert_eq!(outcome.best_action.canonical(), "click [2]");
    }

    #[test]
    fn best_first_uniform_value_pops_in_insertion_order() {
        let mut env = two_level_env();
        let policy = two_level_policy();
        let value = ScriptedValue::new(0.5);
        let budget = SearchBudget {
            max_nodes: 7,
            max_wall_clock: None,
            depth_limit: 2,
            breadth_limit: 5,
        };
        let outcome = best_first_search(&mut env, &task(), &policy, &value, &budget).unwrap();
        let states: Vec<String> = outcome
            .tree
            .sims
            .iter()
            .map(|s| {
                outcome
                    .tree
                    .node(s.evaluated)
                    .observation
                    .lines()
                    .next()
                    .unwrap()
                    .trim_start_matches("state: ")
                    .to_string()
            })
            .collect();
        assert_eq!(states, vec!["root", "click [1]", "click [2]"]);
    }

    #[test]
    fn frontier_exhaustion_returns_best_seen() {
        // depth limit 1 exhausts quickly; best child still reported
        let mut env = two_level_env();
        let policy = two_level_policy();
        let value = ScriptedValue::new(0.2).when("state: click [2]\n", 0.9);
        let budget = SearchBudget {
            max_nodes: 50,
            max_wall_clock: None,
            depth_limit: 1,
            breadth_limit: 5,
        };
        let outcome =
            tot_search(TotMode::Bfs, &mut env, &task(), &policy, &value, &budget).unwrap();
        assert_eq!(outcome.best_action.canonical(), "click [2]");
        let outcome = best_first_search(
            &mut two_level_env(),
            &task(),
            &policy,
            &value,
            &budget,
        )
        .unwrap();
        assert_eq!(outcome.best_action.canonical(), "click [2]");
    }

    #[test]
    fn baselines_restore_the_environment() {
        let mut env = two_level_env();
        let before = env.observation();
        let policy = two_level_policy();
        let value = ScriptedValue::new(0.5);
        let budget = SearchBudget {
            max_nodes: 5,
            max_wall_clock: None,
            depth_limit: 2,
            breadth_limit: 5,
        };
        tot_search(TotMode::Dfs, &mut env, &task(), &policy, &value, &budget).unwrap();
        assert_eq!(env.observation(), before);
        best_first_search(&mut env, &task(), &policy, &value, &budget).unwrap();
        assert_eq!(env.observation(), before);
    }
}
