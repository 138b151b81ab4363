//! Error types shared across the crate.
//!
//! Variants map onto the failure classes surfaced by the CLI: configuration,
//! data/parsing, dimension/numeric, and training, each carrying enough
//! context to diagnose the failure without a debugger.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that should have agreed did not.
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A computation produced or received a non-finite value.
    #[error("numeric error in {context}: {message}")]
    Numeric { context: String, message: String },

    /// An argument was outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration field was invalid.
    #[error("config error: {0}")]
    Config(String),

    /// A dataset-level inconsistency (bad splits, mismatched node sets, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A file could not be parsed. `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Training diverged or could not proceed.
    #[error("training error at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn numeric(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            message: message.into(),
        }
    }
}
