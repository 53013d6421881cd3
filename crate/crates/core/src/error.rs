use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("model format: {0}")]
    Format(String),

    /// An I/O or dimension error with a location prefix attached.
    #[error("{context}: {inner}")]
    Context { context: String, inner: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dim(expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Process exit code for the CLI: 3 for data problems, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }

    /// Prefix the error message with a pipeline stage or location.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
            Error::Domain(m) => Error::Domain(format!("{ctx}: {m}")),
            Error::Format(m) => Error::Format(format!("{ctx}: {m}")),
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{ctx}: {msg}"),
            },
            other => Error::Context {
                context: ctx.to_string(),
                inner: Box::new(other),
            },
        }
    }

    /// The error underneath any context wrappers.
    pub fn kind(&self) -> &Error {
        match self {
            Error::Context { inner, .. } => inner.kind(),
            other => other,
        }
    }
}
