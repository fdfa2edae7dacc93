use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report.
///
/// [`CscError::class`] gives a stable, machine-parsable tag for each variant;
/// the CLI prints it and maps it to an exit code.
#[derive(Debug, Error)]
pub enum CscError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate character '{ch}' (first seen on line {first_line})")]
    Duplicate {
        ch: char,
        line: usize,
        first_line: usize,
    },

    #[error("characters missing from the character table: {}", .0.iter().collect::<String>())]
    Coverage(Vec<char>),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("sentence length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{what} hash mismatch: expected {expected}, found {found}")]
    HashMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("gold character outside both confusion sets at positions {positions:?}")]
    Uncoverable { positions: Vec<usize> },

    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl CscError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CscError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        CscError::Shape(msg.into())
    }

    /// Short tag naming the error class.
    pub fn class(&self) -> &'static str {
        match self {
            CscError::Io { .. } => "io",
            CscError::Parse { .. } => "parse",
            CscError::Duplicate { .. } => "duplicate",
            CscError::Coverage(_) => "coverage",
            CscError::Vocab(_) => "vocab",
            CscError::Length { .. } => "length",
            CscError::Shape(_) => "shape",
            CscError::HashMismatch { .. } => "hash-mismatch",
            CscError::Uncoverable { .. } => "uncoverable",
            CscError::Divergence { .. } => "divergence",
            CscError::Config(_) => "config",
            CscError::Format(_) => "format",
            CscError::Serde(_) => "serde",
        }
    }
}

pub type Result<T> = std::result::Result<T, CscError>;
