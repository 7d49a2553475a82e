use thiserror::Error;

/// Errors produced while ingesting, fitting, or scoring count data.
#[derive(Debug, Error)]
pub enum NbldaError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("dispersion error: {0}")]
    Dispersion(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("gene mismatch between model and data: {0}")]
    GeneMismatch(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NbldaError>;
