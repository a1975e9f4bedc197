use thiserror::Error;

pub type Result<T, E = SsmlError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsmlError {
    #[error("invalid dimension {0}: must be at least 1")]
    InvalidDimension(usize),

    #[error("shape mismatch: expected dimension {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("subspace index {k} out of range 1..={max}")]
    Index { k: usize, max: usize },

    #[error("numeric integrity violated: {0}")]
    NumericIntegrity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible query: {0}")]
    Infeasible(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("refusing to run: estimated {estimated:.3e} shots exceeds budget {budget:.3e}")]
    Budget { estimated: f64, budget: f64 },

    #[error("{0}")]
    Config(String),
}

impl SsmlError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        SsmlError::InvalidParameter(msg.into())
    }
}
