//! Search-augmented decision engine for web-navigation agents.
//!
//! The crate builds up from a deterministic mock-web environment and
//! pluggable chat/embedding providers to:
//!
//! - `search`: PUCT-guided Monte Carlo tree search plus ReACT, tree-of-thought
//!   (BFS/DFS) and best-first baselines, all parameterized over any policy,
//!   value function, and environment;
//! - `policy` / `value`: sampled-response action policies and single-agent /
//!   multi-agent-debate value functions;
//! - `reflection`: contrastive reflection with an embedding-keyed store that
//!   feeds lessons back into future searches;
//! - `export`: chain-of-action and tree-of-action fine-tuning dataset
//!   exporters over recorded episodes;
//! - `harness`: the experiment runner behind the `rmcts` CLI.

pub mod action;
pub mod agent;
pub mod env;
pub mod error;
pub mod export;
pub mod harness;
pub mod policy;
pub mod prompts;
pub mod provider;
pub mod reflection;
pub mod search;
pub mod seeds;
pub mod trajectory;
pub mod value;

pub use action::Action;
pub use agent::{run_episode, AgentKind, AgentSettings, EpisodeResult};
pub use error::{Error, Result};
pub use search::{SearchBudget, SearchOptions, SearchTree, SelectionCriterion};
pub use trajectory::{Trajectory, TrajectoryStep};
