use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent with another.
    #[error("invalid configuration: {field}: {message}")]
    InvalidConfig { field: String, message: String },

    /// Inputs that contradict each other, e.g. a cooperator in a group with no cooperators.
    #[error("inconsistent input: {0}")]
    InconsistentInput(String),

    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// An internal invariant was violated. Always a bug.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("epoch {epoch} aborted: non-finite loss ({diagnostics})")]
    NonFiniteLoss { epoch: usize, diagnostics: String },

    #[error("at least 2 replicates are required, got {0}")]
    InsufficientReplicates(usize),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the user's configuration rather than by a run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::InvalidConfig { .. } | Error::InsufficientReplicates(_))
    }
}
