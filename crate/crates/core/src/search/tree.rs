//! The search tree: per-edge visit counts, action values, and priors, plus
//! the simulation log that exporters replay and tests audit.

use crate::action::Action;
use crate::env::SnapshotToken;
use crate::error::{Error, Result};
use crate::policy::ActionDistribution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type NodeId = usize;

/// Why a node will never be expanded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalReason {
    /// The agent issued `stop` on the way here.
    Stop,
    /// The environment declared the state done.
    EnvDone,
    /// The policy proposed no actions here.
    Exhausted,
    /// The environment transition failed; the node carries value 0.
    Failed,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub action: Action,
    pub prior: f64,
    pub visits: u32,
    pub q: f64,
    pub child: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub observation: String,
    /// Environment snapshot for re-entering this state during search.
    pub snapshot: Option<SnapshotToken>,
    /// (parent node, edge index within the parent).
    pub parent: Option<(NodeId, usize)>,
    pub edges: Vec<Edge>,
    pub depth: usize,
    pub expanded: bool,
    pub terminal: Option<TerminalReason>,
    /// Cached evaluation; every node is evaluated at most once.
    pub value: Option<f64>,
}

impl Node {
    pub fn total_visits(&self) -> u32 {
        self.edges.iter().map(|e| e.visits).sum()
    }

    fn edge_for(&self, action: &Action) -> Result<usize> {
        let canonical = action.canonical();
        self.edges
            .iter()
            .position(|e| e.action.canonical() == canonical)
            .ok_or_else(|| {
                Error::Contract(format!("action `{canonical}` is not a child of this node"))
            })
    }

    /// Exploration bonus U(s,a) = c_p * P(a|s) * sqrt(sum_b N(s,b)) / (1 + N(s,a)).
    pub fn puct_score(&self, action: &Action, c_p: f64) -> Result<f64> {
        let idx = self.edge_for(action)?;
        Ok(self.puct_by_index(idx, c_p))
    }

    pub(crate) fn puct_by_index(&self, idx: usize, c_p: f64) -> f64 {
        let total = self.total_visits() as f64;
        let edge = &self.edges[idx];
        c_p * edge.prior * total.sqrt() / (1.0 + edge.visits as f64)
    }
}

/// One simulation: the selected path (edges from the root), the node that
/// was evaluated, and the value that was backed up.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Simulation {
    pub path: Vec<(NodeId, usize)>,
    pub evaluated: NodeId,
    pub value: f64,
}

/// Which root edge `best_action` returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionCriterion {
    MostVisited,
    HighestValue,
}

#[derive(Debug, Clone)]
pub struct SearchTree {
    pub task_id: String,
    pub goal: String,
    nodes: Vec<Node>,
    pub sims: Vec<Simulation>,
    /// Chosen root action, filled in when the search completes.
    pub best: Option<Action>,
}

pub const ROOT: NodeId = 0;

impl SearchTree {
    pub fn new(
        task_id: impl Into<String>,
        goal: impl Into<String>,
        root_observation: String,
        root_snapshot: Option<SnapshotToken>,
    ) -> Self {
        Self {
            task_id: task_id.into(),
            goal: goal.into(),
            nodes: vec![Node {
                observation: root_observation,
                snapshot: root_snapshot,
                parent: None,
                edges: Vec::new(),
                depth: 0,
                expanded: false,
                terminal: None,
                value: None,
            }],
            sims: Vec::new(),
            best: None,
        }
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate()
    }

    pub fn expanded_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.expanded).count()
    }

    /// Attach the policy's proposals as edges and mark the node expanded.
    pub fn attach_children(&mut self, id: NodeId, dist: &ActionDistribution, breadth: usize) {
        let node = &mut self.nodes[id];
        for entry in dist.entries.iter().take(breadth) {
            node.edges.push(Edge {
                action: entry.action.clone(),
                prior: entry.prior,
                visits: 0,
                q: 0.0,
                child: None,
            });
        }
        node.expanded = true;
    }

    pub fn mark_terminal(&mut self, id: NodeId, reason: TerminalReason) {
        self.nodes[id].terminal = Some(reason);
    }

    pub fn set_value(&mut self, id: NodeId, value: f64) {
        self.nodes[id].value = Some(value);
    }

    /// Materialize the child node behind an edge.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        edge_idx: usize,
        observation: String,
        snapshot: Option<SnapshotToken>,
        terminal: Option<TerminalReason>,
    ) -> NodeId {
        let depth = self.nodes[parent].depth + 1;
        let id = self.nodes.len();
        self.nodes.push(Node {
            observation,
            snapshot,
            parent: Some((parent, edge_idx)),
            edges: Vec::new(),
            depth,
            expanded: false,
            terminal,
            value: None,
        });
        self.nodes[parent].edges[edge_idx].child = Some(id);
        id
    }

    /// Descend from the root choosing argmax Q+U at each expanded node until
    /// reaching a leaf or the depth limit; ties keep the lowest edge index.
    /// The returned path's final edge may point at an unmaterialized child.
    pub fn select_leaf(&self, c_p: f64, depth_limit: usize) -> Vec<(NodeId, usize)> {
        let mut path = Vec::new();
        let mut current = ROOT;
        loop {
            let node = &self.nodes[current];
            if !node.expanded
                || node.terminal.is_some()
                || node.depth >= depth_limit
                || node.edges.is_empty()
            {
                break;
            }
            let mut best_idx = 0;
            let mut best_score = f64::NEG_INFINITY;
            for idx in 0..node.edges.len() {
                let score = node.edges[idx].q + node.puct_by_index(idx, c_p);
                if score > best_score {
                    best_score = score;
                    best_idx = idx;
                }
            }
            path.push((current, best_idx));
            match node.edges[best_idx].child {
                Some(child) => current = child,
                None => break,
            }
        }
        path
    }

    /// Back `v` up the path: N(s,a) += 1 first, then Q moves toward `v` by
    /// 1/N, keeping Q the running mean of everything backed up through the
    /// edge.
    pub fn backpropagate(&mut self, path: &[(NodeId, usize)], v: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Contract(format!("backup value {v} is outside [0,1]")));
        }
        for &(node_id, edge_idx) in path {
            let edge = &mut self.nodes[node_id].edges[edge_idx];
            edge.visits += 1;
            edge.q += (v - edge.q) / edge.visits as f64;
        }
        Ok(())
    }

    pub fn log_simulation(&mut self, path: Vec<(NodeId, usize)>, evaluated: NodeId, value: f64) {
        self.sims.push(Simulation {
            path,
            evaluated,
            value,
        });
    }

    /// The root action under the given criterion. Ties keep the lowest edge
    /// index (insertion order, i.e. descending prior).
    pub fn best_action(&self, criterion: SelectionCriterion) -> Option<&Action> {
        let root = &self.nodes[ROOT];
        if root.edges.is_empty() {
            return None;
        }
        let best = match criterion {
            SelectionCriterion::MostVisited => root
                .edges
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| {
                    a.visits.cmp(&b.visits).then(ib.cmp(ia)) // earlier index wins ties
                })
                .map(|(i, _)| i),
            SelectionCriterion::HighestValue => root
                .edges
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| {
                    a.q.partial_cmp(&b.q)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(ib.cmp(ia))
                })
                .map(|(i, _)| i),
        };
        best.map(|i| &root.edges[i].action)
    }

    /// Root-edge Q for the given action (the search's estimate of the
    /// action's success probability).
    pub fn root_q(&self, action: &Action) -> Option<f64> {
        let canonical = action.canonical();
        self.nodes[ROOT]
            .edges
            .iter()
            .find(|e| e.action.canonical() == canonical)
            .map(|e| e.q)
    }

    /// Value estimate of the root state itself (cached first evaluation).
    pub fn root_value(&self) -> Option<f64> {
        self.nodes[ROOT].value
    }
}

// --- line-delimited serialization ---

pub fn observation_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum TreeRecord {
    Meta {
        task_id: String,
        goal: String,
        best_action: Option<String>,
        nodes: usize,
    },
    Node {
        id: NodeId,
        parent: Option<NodeId>,
        edge_index: Option<usize>,
        action: Option<String>,
        n: u32,
        q: f64,
        p: f64,
        obs_hash: String,
        value: Option<f64>,
        depth: usize,
        expanded: bool,
        terminal: Option<TerminalReason>,
    },
    /// A proposed action whose child state was never materialized.
    Edge {
        parent: NodeId,
        edge_index: usize,
        action: String,
        n: u32,
        q: f64,
        p: f64,
    },
    Obs {
        hash: String,
        text: String,
    },
    Sim {
        index: usize,
        path: Vec<(NodeId, usize)>,
        evaluated: NodeId,
        value: f64,
    },
}

impl SearchTree {
    /// Serialize as line-delimited JSON records: one `node` record per
    /// materialized node, `edge` records for unvisited proposals, deduped
    /// `obs` records, and the `sim` log. See `docs/file-formats.md`.
    pub fn to_records(&self) -> String {
        let mut lines = Vec::new();
        let push = |lines: &mut Vec<String>, rec: &TreeRecord| {
            lines.push(serde_json::to_string(rec).expect("tree records serialize"));
        };
        push(
            &mut lines,
            &TreeRecord::Meta {
                task_id: self.task_id.clone(),
                goal: self.goal.clone(),
                best_action: self.best.as_ref().map(|a| a.canonical()),
                nodes: self.nodes.len(),
            },
        );
        let mut seen_obs = std::collections::BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            let hash = observation_hash(&node.observation);
            seen_obs
                .entry(hash.clone())
                .or_insert_with(|| node.observation.clone());
            let (parent, edge_index, action, n, q, p) = match node.parent {
                Some((pid, eidx)) => {
                    let edge = &self.nodes[pid].edges[eidx];
                    (
                        Some(pid),
                        Some(eidx),
                        Some(edge.action.canonical()),
                        edge.visits,
                        edge.q,
                        edge.prior,
                    )
                }
                None => (None, None, None, 0, 0.0, 0.0),
            };
            push(
                &mut lines,
                &TreeRecord::Node {
                    id,
                    parent,
                    edge_index,
                    action,
                    n,
                    q,
                    p,
                    obs_hash: hash,
                    value: node.value,
                    depth: node.depth,
                    expanded: node.expanded,
                    terminal: node.terminal,
                },
            );
        }
        for (id, node) in self.nodes.iter().enumerate() {
            for (eidx, edge) in node.edges.iter().enumerate() {
                if edge.child.is_none() {
                    push(
                        &mut lines,
                        &TreeRecord::Edge {
                            parent: id,
                            edge_index: eidx,
                            action: edge.action.canonical(),
                            n: edge.visits,
                            q: edge.q,
                            p: edge.prior,
                        },
                    );
                }
            }
        }
        for (hash, text) in seen_obs {
            push(&mut lines, &TreeRecord::Obs { hash, text });
        }
        for (index, sim) in self.sims.iter().enumerate() {
            push(
                &mut lines,
                &TreeRecord::Sim {
                    index,
                    path: sim.path.clone(),
                    evaluated: sim.evaluated,
                    value: sim.value,
                },
            );
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// Rebuild a tree from its record serialization (snapshots are not
    /// preserved; the result supports inspection and export, not search).
    pub fn from_records(text: &str) -> Result<SearchTree> {
        let mut meta: Option<(String, String, Option<String>, usize)> = None;
        let mut node_records = Vec::new();
        let mut edge_records = Vec::new();
        let mut observations = std::collections::BTreeMap::new();
        let mut sims = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: TreeRecord = serde_json::from_str(line).map_err(|e| {
                Error::Parse(format!("tree record line {}: {e}", lineno + 1))
            })?;
            match record {
                TreeRecord::Meta {
                    task_id,
                    goal,
                    best_action,
                    nodes,
                } => meta = Some((task_id, goal, best_action, nodes)),
                TreeRecord::Node { .. } => node_records.push(record),
                TreeRecord::Edge { .. } => edge_records.push(record),
                TreeRecord::Obs { hash, text } => {
                    observations.insert(hash, text);
                }
                TreeRecord::Sim {
                    index,
                    path,
                    evaluated,
                    value,
                } => sims.push((index, Simulation { path, evaluated, value })),
            }
        }
        let (task_id, goal, best_action, node_count) =
            meta.ok_or_else(|| Error::Parse("tree records missing meta line".into()))?;
        if node_records.len() != node_count {
            return Err(Error::Parse(format!(
                "tree meta declares {node_count} nodes but {} node records found",
                node_records.len()
            )));
        }

        let mut nodes: Vec<Node> = Vec::with_capacity(node_count);
        // records are written in id order; rebuild then wire edges
        for record in &node_records {
            if let TreeRecord::Node {
                id,
                obs_hash,
                value,
                depth,
                expanded,
                terminal,
                ..
            } = record
            {
                if *id != nodes.len() {
                    return Err(Error::Parse(format!("node records out of order at id {id}")));
                }
                let observation = observations.get(obs_hash).cloned().ok_or_else(|| {
                    Error::Parse(format!("missing obs record for hash {obs_hash}"))
                })?;
                nodes.push(Node {
                    observation,
                    snapshot: None,
                    parent: None,
                    edges: Vec::new(),
                    depth: *depth,
                    expanded: *expanded,
                    terminal: *terminal,
                    value: *value,
                });
            }
        }
        // (parent, edge_index, action, n, q, p, child)
        type EdgeRow = (NodeId, usize, String, u32, f64, f64, Option<NodeId>);
        let mut edges: Vec<EdgeRow> = Vec::new();
        for record in &node_records {
            if let TreeRecord::Node {
                id,
                parent: Some(pid),
                edge_index: Some(eidx),
                action: Some(action),
                n,
                q,
                p,
                ..
            } = record
            {
                edges.push((*pid, *eidx, action.clone(), *n, *q, *p, Some(*id)));
            }
        }
        for record in &edge_records {
            if let TreeRecord::Edge {
                parent,
                edge_index,
                action,
                n,
                q,
                p,
            } = record
            {
                edges.push((*parent, *edge_index, action.clone(), *n, *q, *p, None));
            }
        }
        edges.sort_by_key(|(pid, eidx, ..)| (*pid, *eidx));
        for (pid, eidx, action, n, q, p, child) in edges {
            let parsed = Action::parse(&action)?;
            let node_edges = &mut nodes[pid].edges;
            if node_edges.len() != eidx {
                return Err(Error::Parse(format!(
                    "node {pid} edge {eidx} out of order during rebuild"
                )));
            }
            node_edges.push(Edge {
                action: parsed,
                prior: p,
                visits: n,
                q,
                child,
            });
            if let Some(cid) = child {
                nodes[cid].parent = Some((pid, eidx));
            }
        }
        sims.sort_by_key(|(index, _)| *index);
        let best = best_action.map(|a| Action::parse(&a)).transpose()?;
        Ok(SearchTree {
            task_id,
            goal,
            nodes,
            sims: sims.into_iter().map(|(_, s)| s).collect(),
            best,
        })
    }
}
