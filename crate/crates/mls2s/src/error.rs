//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide error enum. Variants map onto the CLI exit codes:
/// config/usage problems exit 2, data problems exit 3, numerical
/// failures exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible tensor/matrix shapes, names the operation and both shapes.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An API contract was violated (non-scalar loss, empty mask, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed or inconsistent input data.
    #[error("invalid input: {0}")]
    Input(String),

    /// Bad configuration value or unknown config key.
    #[error("config error: {0}")]
    Config(String),

    /// Numerical failure (divergence, singular system).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error per the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            // A missing file is a usage problem; unreadable content is a data problem.
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Io { .. } => 3,
            Error::Input(_) => 3,
            Error::Shape { .. } | Error::Contract(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
