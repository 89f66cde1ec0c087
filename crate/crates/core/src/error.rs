//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A model response or action string could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
    /// A chat or embedding provider failed after retries.
    #[error("provider error: {0}")]
    Provider(String),
    /// An endpoint replied with a body we cannot interpret.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// A site fixture failed to load or validate.
    #[error("fixture error: {0}")]
    Fixture(String),
    /// An environment transition or snapshot operation failed.
    #[error("environment error: {0}")]
    Env(String),
    /// An experiment configuration is invalid.
    #[error("config error: {0}")]
    Config(String),
    /// Episode artifacts could not be exported.
    #[error("export error: {0}")]
    Export(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
