//! Crate-wide error type with a stable mapping onto CLI exit codes.

use std::path::PathBuf;

/// Everything that can go wrong across the library.
///
/// Variants are grouped by how the command-line front end reports them:
/// usage problems (exit 1), data problems (exit 2), numeric failures (exit 3).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller passed arguments that can never be valid (bad flag value,
    /// malformed config entry, API misuse such as a non-3×3 kernel).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input data is malformed or inconsistent: undecodable image, size
    /// mismatch between paired inputs, corrupt or wrong-version checkpoint.
    #[error("{0}")]
    Data(String),

    /// Two operands whose shapes must agree do not.
    #[error("shape mismatch in {context}: {lhs} vs {rhs}")]
    ShapeMismatch {
        context: &'static str,
        lhs: String,
        rhs: String,
    },

    /// A computation produced or received a non-finite value, or an
    /// iterative solver failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Filesystem problem, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI reports for this error:
    /// 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::Data(_) | Error::ShapeMismatch { .. } | Error::Io { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
