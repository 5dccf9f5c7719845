use thiserror::Error;

use crate::lasso_engine::SparseCoef;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping of errors, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data or a schema problem.
    Input,
    /// A numerical routine failed or did not converge.
    Numerical,
    /// Inconsistent configuration.
    Config,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("column {column} has zero variance and cannot be scaled")]
    ConstantColumn { column: usize },

    #[error("invalid subset schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),

    #[error("invalid lag specification: {0}")]
    InvalidLag(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("response has zero inner product with every predictor")]
    DegenerateResponse,

    #[error("coordinate descent hit the iteration cap ({max_iter} sweeps), KKT violation {kkt_violation:.3e}")]
    MaxIterExceeded {
        max_iter: usize,
        kkt_violation: f64,
        best: Box<SparseCoef>,
    },

    #[error("estimated residual sum of squares fell below -y'y at lambda {lambda:.3e}; the surrogate objective is unbounded below there")]
    SurrogateBreakdown { lambda: f64 },

    #[error("covariance surrogate must be PSD-corrected before fitting")]
    NotPsdCorrected,

    #[error("columns {0} and {1} are never observed together")]
    EmptyPairOverlap(usize, usize),

    #[error("column {column} has only {observed} observed entries")]
    TooFewObserved { column: usize, observed: usize },

    #[error("extreme eigenvalue iteration did not converge")]
    EigenFailure,

    #[error("rank-one update broke down (denominator {0:.3e})")]
    NumericalBreakdown(f64),

    #[error("linear system is not positive definite")]
    SingularSystem,

    #[error("test set has {test} rows but training set only {train}")]
    TestWiderThanTrain { test: usize, train: usize },

    #[error("fold {fold} has {size} observations, need at least 2")]
    FoldTooSmall { fold: usize, size: usize },

    #[error("no candidates to select from")]
    EmptyCandidates,

    #[error("split index sets overlap or are not contiguous: {0}")]
    OverlapError(String),

    #[error("theorem constants out of range: {0}")]
    InvalidConstants(String),

    #[error("response has zero variance")]
    ZeroVariance,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            DimensionMismatch(_) | InvalidDataset(_) | ConstantColumn { .. } | InvalidOrdering(_)
            | EmptyPairOverlap(..) | TooFewObserved { .. } | TestWiderThanTrain { .. }
            | FoldTooSmall { .. } | EmptyCandidates | OverlapError(_) | ZeroVariance
            | DegenerateResponse => ErrorClass::Input,
            MaxIterExceeded { .. } | SurrogateBreakdown { .. } | EigenFailure | NumericalBreakdown(_) | SingularSystem
            | NotPsdCorrected => ErrorClass::Numerical,
            InvalidSchedule(_) | InvalidLag(_) | InvalidConfig(_) | InvalidConstants(_) => {
                ErrorClass::Config
            }
        }
    }
}
