//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by schedule construction, the objective, the protocol
/// state machines, the privacy accountant, the simulator and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain where a formula is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition of a construction does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Vector or dataset dimensions disagree.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A text input could not be parsed.
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A file that must contain data is empty.
    #[error("{}: file contains no records", .0.display())]
    EmptyInput(PathBuf),

    /// Configuration failed semantic validation; every problem is listed.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    /// A message sequence broke the protocol contract.
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// An online or replayed audit found an invariant violation.
    #[error("audit violation: {0}")]
    Audit(String),

    /// An iterative procedure failed to converge.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
