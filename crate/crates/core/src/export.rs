//! Fine-tuning dataset exporters over recorded episodes.
//!
//! Chain export keeps only the executed actions; tree export replays each
//! step's search traversal (explore, evaluate, backtrack) and flattens it
//! into one multi-turn chat, combining value estimate and action into a
//! single assistant turn.

use crate::action::Action;
use crate::error::{Error, Result};
use crate::prompts;
use crate::search::{SearchTree, SelectionCriterion, ROOT};
use crate::trajectory::Trajectory;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordTurn {
    pub role: String,
    pub content: String,
}

impl RecordTurn {
    fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }
    fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
    fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub task_id: String,
    pub source_agent: String,
    /// Number of assistant turns carrying actions.
    pub action_count: usize,
    /// Search estimate of final success (last executed action's root-edge Q).
    pub estimated_final_value: Option<f64>,
}

/// One multi-turn fine-tuning sample: an optional system turn followed by
/// strictly alternating user/assistant turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRecord {
    pub messages: Vec<RecordTurn>,
    pub metadata: RecordMeta,
}

impl ChatRecord {
    pub fn validate(&self) -> Result<()> {
        let mut expect_user = true;
        for (i, turn) in self.messages.iter().enumerate() {
            if i == 0 && turn.role == "system" {
                continue;
            }
            let expected = if expect_user { "user" } else { "assistant" };
            if turn.role != expected {
                return Err(Error::Export(format!(
                    "turn {i} has role `{}`, expected `{expected}`",
                    turn.role
                )));
            }
            expect_user = !expect_user;
        }
        Ok(())
    }

    pub fn assistant_turns(&self) -> impl Iterator<Item = &RecordTurn> {
        self.messages.iter().filter(|t| t.role == "assistant")
    }
}

fn user_observation_turn(goal: &str, observation: &str, first: bool) -> RecordTurn {
    if first {
        RecordTurn::user(format!("OBJECTIVE: {goal}\n\nOBSERVATION:\n{observation}"))
    } else {
        RecordTurn::user(format!("OBSERVATION:\n{observation}"))
    }
}

/// Imitation-learning export: the executed actions only, search discarded.
pub fn export_chain(trajectory: &Trajectory) -> Result<ChatRecord> {
    if trajectory.steps.is_empty() {
        return Err(Error::Export("cannot export an empty trajectory".into()));
    }
    let mut messages = vec![RecordTurn::system(prompts::SYSTEM)];
    for (t, step) in trajectory.steps.iter().enumerate() {
        messages.push(user_observation_turn(&trajectory.goal, &step.observation, t == 0));
        messages.push(RecordTurn::assistant(step.action.canonical()));
    }
    let record = ChatRecord {
        messages,
        metadata: RecordMeta {
            task_id: trajectory.task_id.clone(),
            source_agent: trajectory.agent.clone(),
            action_count: trajectory.steps.len(),
            estimated_final_value: trajectory.steps.last().and_then(|s| s.value_estimate),
        },
    };
    record.validate()?;
    Ok(record)
}

/// One step of a replayed search traversal. Explore steps pair the action
/// with the value estimate of the state it reaches; backtrack steps carry a
/// `go_back` with the value of the state being left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalStep {
    pub observation: String,
    pub value: f64,
    pub action: Action,
    pub is_backtrack: bool,
}

fn render_value(v: f64) -> String {
    format!("{v:.3}")
}

impl TraversalStep {
    /// The combined (value, action) assistant rendering.
    pub fn assistant_text(&self) -> String {
        format!("value: {}\naction: {}", render_value(self.value), self.action.canonical())
    }
}

struct Replay {
    steps: Vec<TraversalStep>,
    /// Whether the walk ended by descending the best root action.
    reached_best: bool,
}

fn replay_impl(tree: &SearchTree) -> Result<Replay> {
    if tree.sims.is_empty() {
        return Err(Error::Export(
            "tree has no simulation log; it was not produced by a recorded search".into(),
        ));
    }
    let best = tree
        .best
        .clone()
        .or_else(|| tree.best_action(SelectionCriterion::MostVisited).cloned());
    let Some(best) = best else {
        // a root with no proposals has nothing to replay
        return Ok(Replay { steps: Vec::new(), reached_best: false });
    };
    let best_canonical = best.canonical();

    let node_value = |id| -> f64 { tree.node(id).value.unwrap_or(0.0) };
    let child_of = |node_id: usize, edge_idx: usize| -> Result<usize> {
        tree.node(node_id).edges[edge_idx].child.ok_or_else(|| {
            Error::Export("simulation log references an unmaterialized child".into())
        })
    };

    let mut steps = Vec::new();
    // cursor: edge path from the root to where the walk currently stands
    let mut cursor: Vec<(usize, usize)> = Vec::new();
    let mut reached_best = false;

    for sim in &tree.sims {
        if sim.path.is_empty() {
            continue; // root-only simulation, nothing walked
        }
        let common = cursor
            .iter()
            .zip(sim.path.iter())
            .take_while(|(a, b)| a == b)
            .count();
        // ascend: one go_back per level, leaving each state in turn
        while cursor.len() > common {
            let (node_id, edge_idx) = *cursor.last().unwrap();
            let child = child_of(node_id, edge_idx)?;
            steps.push(TraversalStep {
                observation: tree.node(child).observation.clone(),
                value: node_value(child),
                action: Action::GoBack,
                is_backtrack: true,
            });
            cursor.pop();
        }
        // descend the remainder of the simulation's path
        for &(node_id, edge_idx) in &sim.path[common..] {
            let child = child_of(node_id, edge_idx)?;
            steps.push(TraversalStep {
                observation: tree.node(node_id).observation.clone(),
                value: node_value(child),
                action: tree.node(node_id).edges[edge_idx].action.clone(),
                is_backtrack: false,
            });
            cursor.push((node_id, edge_idx));
        }
        // replay stops the first time the search walks the best root action
        let (root_id, root_edge) = sim.path[0];
        if root_id == ROOT && tree.node(ROOT).edges[root_edge].action.canonical() == best_canonical
        {
            reached_best = true;
            break;
        }
    }

    if !reached_best {
        // walk back to the root so the traversal ends where execution resumes
        while let Some((node_id, edge_idx)) = cursor.pop() {
            let child = child_of(node_id, edge_idx)?;
            steps.push(TraversalStep {
                observation: tree.node(child).observation.clone(),
                value: node_value(child),
                action: Action::GoBack,
                is_backtrack: true,
            });
        }
    }
    Ok(Replay { steps, reached_best })
}

/// Replay a recorded search in simulation order, emitting explore steps and
/// explicit backtracks, truncated right after the first simulation that
/// enters the eventually-best root action's subtree.
pub fn replay_tree_traversal(tree: &SearchTree) -> Result<Vec<TraversalStep>> {
    replay_impl(tree).map(|r| r.steps)
}

/// Exploratory-learning export: per-step tree traversals flattened into one
/// chat; every assistant turn carries the combined (value, action) pair and
/// the final turn of each step is the executed best action.
pub fn export_tree(trajectory: &Trajectory, trees: &[SearchTree]) -> Result<ChatRecord> {
    if trajectory.steps.is_empty() {
        return Err(Error::Export("cannot export an empty trajectory".into()));
    }
    if trajectory.steps.len() != trees.len() {
        return Err(Error::Export(format!(
            "trajectory has {} steps but {} trees were provided",
            trajectory.steps.len(),
            trees.len()
        )));
    }
    let mut messages = vec![RecordTurn::system(prompts::SYSTEM)];
    let mut action_count = 0usize;
    let mut first = true;
    for (step, tree) in trajectory.steps.iter().zip(trees) {
        let replay = replay_impl(tree)?;
        for traversal_step in &replay.steps {
            messages.push(user_observation_turn(
                &trajectory.goal,
                &traversal_step.observation,
                first,
            ));
            first = false;
            messages.push(RecordTurn::assistant(traversal_step.assistant_text()));
            action_count += 1;
        }
        if !replay.reached_best {
            // trivial or best-untouched searches: emit the executed action
            // from the root state directly
            let value = tree
                .root_q(&step.action)
                .filter(|_| {
                    tree.node(ROOT)
                        .edges
                        .iter()
                        .any(|e| e.action.canonical() == step.action.canonical() && e.visits > 0)
                })
                .or_else(|| tree.root_value())
                .or(step.value_estimate)
                .unwrap_or(0.0);
            messages.push(user_observation_turn(&trajectory.goal, &step.observation, first));
            first = false;
            messages.push(RecordTurn::assistant(
                TraversalStep {
                    observation: step.observation.clone(),
                    value,
                    action: step.action.clone(),
                    is_backtrack: false,
                }
                .assistant_text(),
            ));
            action_count += 1;
        }
    }
    let record = ChatRecord {
        messages,
        metadata: RecordMeta {
            task_id: trajectory.task_id.clone(),
            source_agent: trajectory.agent.clone(),
            action_count,
            estimated_final_value: trajectory.steps.last().and_then(|s| s.value_estimate),
        },
    };
    record.validate()?;
    Ok(record)
}

/// Keep records whose action count is at most `max_actions`, preserving
/// order.
pub fn filter_by_length(records: Vec<ChatRecord>, max_actions: usize) -> Vec<ChatRecord> {
    records
        .into_iter()
        .filter(|r| r.metadata.action_count <= max_actions)
        .collect()
}

/// Write records as line-delimited JSON (one chat record per line).
pub fn write_records(path: impl AsRef<Path>, records: &[ChatRecord]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Export(format!("serialize chat record: {e}")))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ChatRecord>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ChatRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("chat record line {}: {e}", lineno + 1)))?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::aggregate_actions;
    use crate::trajectory::TrajectoryStep;

    fn action(s: &str) -> Action {
        Action::parse(s).unwrap()
    }

    fn trajectory_of(actions: &[&str]) -> Trajectory {
        let mut t = Trajectory::new("task-1", "find the thing", "rmcts");
        for (i, a) in actions.iter().enumerate() {
            t.steps.push(TrajectoryStep {
                observation: format!("obs {i}\nURL: http://x/{i}"),
                action: action(a),
                value_estimate: Some(0.5),
            });
        }
        t.final_observation = Some("final".into());
        t
    }

    fn attach(tree: &mut SearchTree, node: usize, entries: &[(&str, usize)]) {
        let mut samples = Vec::new();
        for (a, c) in entries {
            samples.extend(std::iter::repeat_n(action(a), *c));
        }
        let dist = aggregate_actions(&samples, 5).unwrap();
        tree.attach_children(node, &dist, 5);
    }

    /// Root with children A (v=0.2, explored first) and B (v=0.9, best).
    fn two_child_tree() -> SearchTree {
        let mut tree = SearchTree::new("task-1", "find the thing", "obs 0\nURL: http://x/0".into(), None);
        attach(&mut tree, ROOT, &[("click [1]", 11), ("click [2]", 9)]);
        tree.set_value(ROOT, 0.5);
        tree.log_simulation(vec![], ROOT, 0.5);
        let a = tree.add_child(ROOT, 0, "obs A\nURL: http://x/a".into(), None, None);
        tree.set_value(a, 0.2);
        tree.backpropagate(&[(ROOT, 0)], 0.2).unwrap();
        tree.log_simulation(vec![(ROOT, 0)], a, 0.2);
        let b = tree.add_child(ROOT, 1, "obs B\nURL: http://x/b".into(), None, None);
        tree.set_value(b, 0.9);
        tree.backpropagate(&[(ROOT, 1)], 0.9).unwrap();
        tree.log_simulation(vec![(ROOT, 1)], b, 0.9);
        tree.backpropagate(&[(ROOT, 1)], 0.9).unwrap();
        tree.log_simulation(vec![(ROOT, 1)], b, 0.9);
        tree.best = Some(action("click [2]"));
        tree
    }

    #[test]
    fn chain_export_one_action() {
        let record = export_chain(&trajectory_of(&["stop [done]"])).unwrap();
        assert_eq!(record.assistant_turns().count(), 1);
        assert_eq!(record.metadata.action_count, 1);
        assert_eq!(record.messages[0].role, "system");
        assert!(record.messages[1].content.starts_with("OBJECTIVE: find the thing"));
        record.validate().unwrap();
    }

    #[test]
    fn chain_export_five_actions_without_values() {
        let record = export_chain(&trajectory_of(&[
            "click [1]",
            "click [2]",
            "click [3]",
            "click [4]",
            "stop [x]",
        ]))
        .unwrap();
        assert_eq!(record.assistant_turns().count(), 5);
        for turn in record.assistant_turns() {
            assert!(!turn.content.contains("value:"), "{}", turn.content);
        }
        let actions: Vec<&str> = record.assistant_turns().map(|t| t.content.as_str()).collect();
        assert_eq!(actions, ["click [1]", "click [2]", "click [3]", "click [4]", "stop [x]"]);
    }

    #[test]
    fn chain_export_empty_trajectory_errors() {
        let t = Trajectory::new("t", "g", "react");
        assert!(export_chain(&t).is_err());
    }

    #[test]
    fn replay_two_child_tree_matches_the_manual_walk() {
        let tree = two_child_tree();
        let steps = replay_tree_traversal(&tree).unwrap();
        assert_eq!(steps.len(), 3);
        // (o0, vA, A)
        assert!(steps[0].observation.starts_with("obs 0"));
        assert_eq!(steps[0].action.canonical(), "click [1]");
        assert!((steps[0].value - 0.2).abs() < 1e-12);
        assert!(!steps[0].is_backtrack);
        // backtrack out of A
        assert!(steps[1].is_backtrack);
        assert_eq!(steps[1].action, Action::GoBack);
        assert!(steps[1].observation.starts_with("obs A"));
        // (o0, vB, B) and truncation right after entering the best subtree
        assert!(steps[2].observation.starts_with("obs 0"));
        assert_eq!(steps[2].action.canonical(), "click [2]");
        assert!((steps[2].value - 0.9).abs() < 1e-12);
    }

    #[test]
    fn replay_without_backtracks_when_first_simulation_is_best() {
        let mut tree = SearchTree::new("t", "g", "obs 0".into(), None);
        attach(&mut tree, ROOT, &[("click [1]", 11), ("click [2]", 9)]);
        tree.set_value(ROOT, 0.5);
        tree.log_simulation(vec![], ROOT, 0.5);
        let a = tree.add_child(ROOT, 0, "obs A".into(), None, None);
        tree.set_value(a, 0.8);
        tree.backpropagate(&[(ROOT, 0)], 0.8).unwrap();
        tree.log_simulation(vec![(ROOT, 0)], a, 0.8);
        tree.best = Some(action("click [1]"));
        let steps = replay_tree_traversal(&tree).unwrap();
        assert_eq!(steps.len(), 1);
        assert!(steps.iter().all(|s| !s.is_backtrack));
    }

    #[test]
    fn replay_follows_simulation_order_not_tree_order() {
        // edge 1 (click [2]) is walked before edge 0 (click [1])
        let mut tree = SearchTree::new("t", "g", "obs 0".into(), None);
        attach(&mut tree, ROOT, &[("click [1]", 11), ("click [2]", 9)]);
        tree.set_value(ROOT, 0.5);
        tree.log_simulation(vec![], ROOT, 0.5);
        let b = tree.add_child(ROOT, 1, "obs B".into(), None, None);
        tree.set_value(b, 0.4);
        tree.backpropagate(&[(ROOT, 1)], 0.4).unwrap();
        tree.log_simulation(vec![(ROOT, 1)], b, 0.4);
        let a = tree.add_child(ROOT, 0, "obs A".into(), None, None);
        tree.set_value(a, 0.7);
        tree.backpropagate(&[(ROOT, 0)], 0.7).unwrap();
        tree.log_simulation(vec![(ROOT, 0)], a, 0.7);
        tree.best = Some(action("click [1]"));
        let steps = replay_tree_traversal(&tree).unwrap();
        let visited: Vec<String> = steps.iter().map(|s| s.action.canonical()).collect();
        assert_eq!(visited, ["click [2]", "go_back", "click [1]"]);
    }

    #[test]
    fn replay_backtracks_once_per_level() {
        // walk to depth 2 under A, then the next simulation explores B
        let mut tree = SearchTree::new("t", "g", "obs 0".into(), None);
        attach(&mut tree, ROOT, &[("click [1]", 11), ("click [2]", 9)]);
        tree.set_value(ROOT, 0.5);
        tree.log_simulation(vec![], ROOT, 0.5);
        let a = tree.add_child(ROOT, 0, "obs A".into(), None, None);
        tree.set_value(a, 0.3);
        attach(&mut tree, a, &[("click [3]", 20)]);
        tree.backpropagate(&[(ROOT, 0)], 0.3).unwrap();
        tree.log_simulation(vec![(ROOT, 0)], a, 0.3);
        let deep = tree.add_child(a, 0, "obs deep".into(), None, None);
        tree.set_value(deep, 0.25);
        tree.backpropagate(&[(ROOT, 0), (a, 0)], 0.25).unwrap();
        tree.log_simulation(vec![(ROOT, 0), (a, 0)], deep, 0.25);
        let b = tree.add_child(ROOT, 1, "obs B".into(), None, None);
        tree.set_value(b, 0.9);
        tree.backpropagate(&[(ROOT, 1)], 0.9).unwrap();
        tree.log_simulation(vec![(ROOT, 1)], b, 0.9);
        tree.best = Some(action("click [2]"));
        let steps = replay_tree_traversal(&tree).unwrap();
        let walk: Vec<(String, bool)> = steps
            .iter()
            .map(|s| (s.action.canonical(), s.is_backtrack))
            .collect();
        assert_eq!(
            walk,
            vec![
                ("click [1]".to_string(), false),
                ("click [3]".to_string(), false),
                ("go_back".to_string(), true),
                ("go_back".to_string(), true),
                ("click [2]".to_string(), false),
            ]
        );
    }

    #[test]
    fn replay_requires_a_simulation_log() {
        let mut tree = SearchTree::new("t", "g", "obs".into(), None);
        attach(&mut tree, ROOT, &[("click [1]", 20)]);
        assert!(replay_tree_traversal(&tree).is_err());
    }

    #[test]
    fn tree_export_emits_exactly_one_backtrack_for_the_two_child_episode() {
        let mut trajectory = trajectory_of(&["click [2]"]);
        trajectory.steps[0].observation = "obs 0\nURL: http://x/0".into();
        let record = export_tree(&trajectory, &[two_child_tree()]).unwrap();
        record.validate().unwrap();
        let backtracks: Vec<&RecordTurn> = record
            .assistant_turns()
            .filter(|t| t.content.contains("go_back"))
            .collect();
        assert_eq!(backtracks.len(), 1);
        // the final assistant turn is the executed best action
        let last = record.assistant_turns().last().unwrap();
        assert!(last.content.ends_with("action: click [2]"), "{}", last.content);
        assert_eq!(record.metadata.action_count, 3);
    }

    #[test]
    fn tree_export_requires_one_tree_per_step() {
        let trajectory = trajectory_of(&["click [1]", "stop []"]);
        assert!(export_tree(&trajectory, &[two_child_tree()]).is_err());
    }

    /// Strip the value annotation from a (value, action) assistant turn.
    fn strip_value(content: &str) -> String {
        match content.split_once("action: ") {
            Some((_, action)) => action.to_string(),
            None => content.to_string(),
        }
    }

    #[test]
    fn trivial_trees_reduce_tree_export_to_chain_plus_values() {
        // max-nodes=1 style trees: root expanded and evaluated, nothing walked
        let trajectory = trajectory_of(&["click [1]", "stop [done]"]);
        let mut trees = Vec::new();
        for (i, step) in trajectory.steps.iter().enumerate() {
            let mut tree = SearchTree::new("task-1", "find the thing", format!("obs {i}\nURL: http://x/{i}"), None);
            attach(&mut tree, ROOT, &[(step.action.canonical().as_str(), 20)]);
            tree.set_value(ROOT, 0.6);
            tree.log_simulation(vec![], ROOT, 0.6);
            tree.best = Some(step.action.clone());
            trees.push(tree);
        }
        let tree_record = export_tree(&trajectory, &trees).unwrap();
        let chain_record = export_chain(&trajectory).unwrap();
        assert_eq!(tree_record.messages.len(), chain_record.messages.len());
        for (t, c) in tree_record.messages.iter().zip(&chain_record.messages) {
            assert_eq!(t.role, c.role);
            if t.role == "assistant" {
                assert!(t.content.starts_with("value: "));
                assert_eq!(strip_value(&t.content), c.content);
            } else {
                assert_eq!(t.content, c.content);
            }
        }
    }

    #[test]
    fn filter_by_length_keeps_records_at_or_under_the_cap() {
        let mk = |n: usize| {
            let mut r = export_chain(&trajectory_of(&["click [1]"])).unwrap();
            r.metadata.action_count = n;
            r
        };
        let records = vec![mk(5), mk(21), mk(20)];
        let kept = filter_by_length(records, 20);
        let counts: Vec<usize> = kept.iter().map(|r| r.metadata.action_count).collect();
        assert_eq!(counts, vec![5, 20]);
        // identity when everything is short enough
        let records = vec![mk(1), mk(2)];
        assert_eq!(filter_by_length(records.clone(), 20), records);
    }

    #[test]
    fn records_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.jsonl");
        let records = vec![
            export_chain(&trajectory_of(&["click [1]"])).unwrap(),
            export_chain(&trajectory_of(&["click [2]", "stop []"])).unwrap(),
        ];
        write_records(&path, &records).unwrap();
        assert_eq!(read_records(&path).unwrap(), records);
    }
}
