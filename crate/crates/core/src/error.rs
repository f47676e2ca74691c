use thiserror::Error;

use crate::algorithm::RunRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("batch size must be at least 1")]
    EmptyBatch,

    #[error("oracle returned a non-finite value")]
    NonFiniteValue,

    #[error("lower-level solver stopped after {iters} iterations with certified bound {bound:e}")]
    IterationCapExceeded { iters: usize, bound: f64 },

    #[error("non-finite gradient in lower-level solve after {iters} iterations")]
    NonFiniteGradient { iters: usize },

    #[error("non-finite iterate at step {k}")]
    NonFiniteIterate { k: usize, partial: Box<RunRecord> },

    #[error("degenerate output-index law: {0}")]
    DegeneratePmf(String),

    #[error("step sizes violate the convex-case policy: {0}")]
    StepPolicyViolation(String),

    #[error("{0} lies outside the domain (-1/e, 0) of the lower Lambert W branch")]
    Domain(f64),

    #[error("validation sample {0} has a zero ground-truth norm")]
    ZeroTruthNorm(usize),

    #[error("cannot draw {k} distinct indices when only {available} have positive probability")]
    TooFewCandidates { k: usize, available: usize },

    #[error("malformed data: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
