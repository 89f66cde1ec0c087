//! A bare action-tree environment for search tests: states are action
//! paths, observations are stable renderings of the path, and rewards come
//! from a table.

use super::{Environment, SnapshotToken};
use crate::action::Action;
use crate::error::{Error, Result};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

#[derive(Debug, Default)]
pub struct ScriptedEnvSpec {
    /// Action labels available at each state, keyed by path (root is "").
    /// States without an entry have no actions.
    pub actions: BTreeMap<String, Vec<String>>,
    /// Terminal reward per path; missing paths score 0.
    pub rewards: BTreeMap<String, f64>,
    /// States the environment itself declares done.
    pub terminal: BTreeSet<String>,
    /// `path->action` transitions that fail (for error-path tests).
    pub failing: BTreeSet<String>,
}

impl ScriptedEnvSpec {
    pub fn path_key(path: &[String]) -> String {
        path.join("/")
    }
}

pub struct ScriptedEnv {
    spec: Arc<ScriptedEnvSpec>,
    path: Vec<String>,
    finished: bool,
    answer: Option<String>,
    snapshots: BTreeMap<u64, (Vec<String>, bool, Option<String>)>,
    episode: u64,
    next_snapshot: u64,
}

impl ScriptedEnv {
    pub fn new(spec: Arc<ScriptedEnvSpec>) -> Self {
        Self {
            spec,
            path: Vec::new(),
            finished: false,
            answer: None,
            snapshots: BTreeMap::new(),
            episode: 1,
            next_snapshot: 0,
        }
    }

    pub fn reset(&mut self) {
        self.path.clear();
        self.finished = false;
        self.answer = None;
        self.snapshots.clear();
        self.episode += 1;
        self.next_snapshot = 0;
    }

    pub fn path_key(&self) -> String {
        ScriptedEnvSpec::path_key(&self.path)
    }

    fn available(&self) -> &[String] {
        self.spec
            .actions
            .get(&self.path_key())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

impl Environment for ScriptedEnv {
    fn observation(&self) -> String {
        let state = if self.path.is_empty() {
            "root".to_string()
        } else {
            self.path_key()
        };
        let mut out = format!("state: {state}\navailable: {}", self.available().join(", "));
        if self.finished {
            out.push_str(&format!(
                "\nended with answer: {}",
                self.answer.clone().unwrap_or_default()
            ));
        }
        out
    }

    fn is_done(&self) -> bool {
        self.finished || self.spec.terminal.contains(&self.path_key())
    }

    fn step(&mut self, action: &Action) -> Result<()> {
        if self.finished {
            return Err(Error::Contract("cannot step a finished environment".into()));
        }
        if let Action::Stop { answer } = action {
            self.finished = true;
            self.answer = Some(answer.clone());
            return Ok(());
        }
        let label = action.canonical();
        let edge = if self.path.is_empty() {
            label.clone()
        } else {
            format!("{}/{label}", self.path_key())
        };
        if self.spec.failing.contains(&edge) {
            return Err(Error::Env(format!("transition `{edge}` failed by script")));
        }
        self.path.push(label);
        Ok(())
    }

    fn snapshot(&mut self) -> SnapshotToken {
        let id = self.next_snapshot;
        self.next_snapshot += 1;
        self.snapshots
            .insert(id, (self.path.clone(), self.finished, self.answer.clone()));
        SnapshotToken {
            episode: self.episode,
            id,
        }
    }

    fn restore(&mut self, token: SnapshotToken) -> Result<()> {
        if token.episode != self.episode {
            return Err(Error::Env("stale snapshot token".into()));
        }
        let (path, finished, answer) = self
            .snapshots
            .get(&token.id)
            .cloned()
            .ok_or_else(|| Error::Env(format!("unknown snapshot id {}", token.id)))?;
        self.path = path;
        self.finished = finished;
        self.answer = answer;
        Ok(())
    }

    fn reward(&self) -> f64 {
        self.spec
            .rewards
            .get(&self.path_key())
            .copied()
            .unwrap_or(0.0)
    }
}
