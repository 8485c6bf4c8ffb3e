use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("{0} is not an eigenvalue of the matrix")]
    NotAnEigenvalue(Complex64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An internal consistency check failed; usually a numerical-rank borderline case.
    #[error("numerical diagnostic: {0}")]
    Diagnostic(String),

    #[error("infeasible regime: {0}")]
    InfeasibleRegime(String),

    #[error("did not converge: {0}")]
    NoConvergence(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
