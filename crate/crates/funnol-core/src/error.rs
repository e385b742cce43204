use thiserror::Error;

/// Errors produced by any funnol-core operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("power iteration did not converge, best estimate {estimate}")]
    PowerIteration { estimate: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("label mismatch across channel files at line {line}")]
    LabelMismatch { line: usize },

    #[error("{0}")]
    Degenerate(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint kind is {found}, command requires {expected}")]
    CheckpointKind { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
