use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape mismatch, inadmissible action, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config line {line}: key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed telemetry: {0}")]
    Telemetry(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// The run loop stopped because the telemetry sink failed. The checkpoint
    /// captures the state right after the last fully recorded step.
    #[error("run aborted after step {iteration}: {source}")]
    RunAborted {
        iteration: u64,
        checkpoint: Box<crate::learner::Checkpoint>,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
