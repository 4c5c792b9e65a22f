use thiserror::Error;

/// Errors produced while ingesting, validating or evaluating streams.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input at a given 1-based line.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Input is well-formed but violates a domain invariant.
    #[error("{0}")]
    Validation(String),

    /// A name was looked up in a registry that does not know it.
    #[error("unknown {kind} `{name}` (available: {available})")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    /// Attach a line number to a validation error raised while reading a record.
    pub(crate) fn at_line(self, line: usize) -> Self {
        match self {
            Error::Validation(message) => Error::Parse { line, message },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
