use thiserror::Error;

/// Errors produced anywhere in the optimizer stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("gram matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("degenerate candidate: conditional variance {0:e} is at or below tolerance")]
    DegenerateCandidate(f64),

    #[error("internal consistency violated: {0}")]
    Inconsistent(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("constraint model fit failed: {0}")]
    ConstraintFit(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
