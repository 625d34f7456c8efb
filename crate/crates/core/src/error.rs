//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type. Every failure mode carries enough context to be
/// actionable from a CLI one-liner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}{}", ctx_suffix(.context))]
    ShapeMismatch {
        expected: String,
        got: String,
        context: String,
    },

    #[error("format error in {path}: {field}: {reason}")]
    Format {
        path: String,
        field: String,
        reason: String,
    },

    #[error("config validation failed: {}", .violations.join("; "))]
    Config { violations: Vec<String> },

    #[error("degenerate embedding: pooled vector has zero norm")]
    DegenerateEmbedding,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("wav decode error on {path}: {reason}")]
    Wav { path: String, reason: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn ctx_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
            context: String::new(),
        }
    }

    pub fn shape_in(
        context: impl Into<String>,
        expected: impl Into<String>,
        got: impl Into<String>,
    ) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
            context: context.into(),
        }
    }

    pub fn format(
        path: impl Into<String>,
        field: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
