//! Environments the searchers run against.
//!
//! [`web::WebEnv`] is the deterministic mock-web POMDP defined by site
//! fixtures; [`scripted::ScriptedEnv`] is a bare action-tree environment for
//! search tests. Both support snapshot/restore so search can branch without
//! replaying prefixes.

pub mod fixture;
pub mod fixture_agents;
pub mod scripted;
pub mod web;

use crate::action::Action;
use crate::error::Result;

/// Opaque handle to a saved environment state. Tokens are only valid within
/// the episode that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SnapshotToken {
    pub(crate) episode: u64,
    pub(crate) id: u64,
}

pub trait Environment: Send {
    /// Render the current observation (a pure function of the state).
    fn observation(&self) -> String;

    /// True once the episode has terminated (stop action or env rule).
    fn is_done(&self) -> bool;

    /// Apply one action. Stepping a finished environment is a contract
    /// violation.
    fn step(&mut self, action: &Action) -> Result<()>;

    /// Save the complete current state (including site-state mutations).
    fn snapshot(&mut self) -> SnapshotToken;

    /// Return to a previously saved state, bit-identical to the snapshot
    /// moment. Tokens from another episode are rejected.
    fn restore(&mut self, token: SnapshotToken) -> Result<()>;

    /// Terminal reward of the current state for the bound task.
    fn reward(&self) -> f64;
}
