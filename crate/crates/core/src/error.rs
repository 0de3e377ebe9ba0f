// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("simulator fault: {0}")]
    Simulator(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("learner diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            got,
        }
    }
}
