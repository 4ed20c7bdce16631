use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Document does not match the expected file format.
    #[error("format error at {location}: {message}")]
    Format { location: String, message: String },

    /// Two entities share a surface form, so parsing would be ambiguous.
    #[error("ambiguous name {name:?}: used by {first} and {second}")]
    Ambiguity {
        name: String,
        first: String,
        second: String,
    },

    /// A reference points at something that does not exist.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A record violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("template arity error: {0}")]
    Arity(String),

    #[error("binding error: {0}")]
    Binding(String),

    #[error("template selection error: {0}")]
    Selection(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("session state error: {0}")]
    State(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("timed out after {0:?}")]
    Timeout(std::time::Duration),

    /// Displays the whole chain itself, so it reports no separate source.
    #[error("{context}: {inner}")]
    Context { context: String, inner: Box<Error> },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            inner: Box::new(self),
        }
    }

    /// Innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { inner, .. } => inner.root(),
            other => other,
        }
    }
}

/// Turns a serde_json failure into a format error carrying line and column.
pub(crate) fn json_error(what: &str, err: serde_json::Error) -> Error {
    Error::format(
        format!("{what} line {} column {}", err.line(), err.column()),
        err.to_string(),
    )
}
