use thiserror::Error;

/// Errors surfaced by the reconstruction library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("domain misuse: {0}")]
    DomainMisuse(String),

    #[error("infeasible sampling mask: {0}")]
    InfeasibleMask(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    #[error("operator/model tag mismatch: {0}")]
    TagMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file {path}: {detail}")]
    Malformed { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, CoreError>;
