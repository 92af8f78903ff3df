use thiserror::Error;

/// Errors raised by the measure, transport, kernel and regression layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (minimum eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("grid mismatch: {0} vs {1}")]
    GridMismatch(usize, usize),

    #[error("features do not share the same reference measure")]
    ReferenceMismatch,

    #[error("no grid sample point falls inside the support")]
    EmptySupport,

    #[error("row {0} of the coupling carries no mass")]
    EmptyRow(usize),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("scaling vectors underflowed; regularization too weak for the cost scale")]
    NumericalUnderflow,

    #[error("Matérn smoothness {0} has no closed form (supported: 0.5, 1.5, 2.5)")]
    UnsupportedSmoothness(f64),

    #[error("Cholesky factorization failed after jitter escalation")]
    CholeskyFailure,

    #[error("truths have zero variance")]
    ZeroVarianceTruths,

    #[error("all pairwise distances are zero")]
    DegenerateDistances,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to rejected input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::NumericalUnderflow
                | Error::CholeskyFailure
                | Error::DegenerateDistances
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
