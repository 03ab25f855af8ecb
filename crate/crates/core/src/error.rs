use thiserror::Error;

/// Errors produced by the fusion library.
#[derive(Error, Debug)]
pub enum FusionError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: String,
        actual: String,
        context: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FusionError>;

impl FusionError {
    pub(crate) fn dims(expected: (usize, usize), actual: (usize, usize), context: &'static str) -> Self {
        FusionError::DimensionMismatch {
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
            context,
        }
    }
}
