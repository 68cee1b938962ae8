use thiserror::Error;

/// Errors raised by estimators, bandwidth selection and model fitting.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Every kernel value at the query point is zero.
    #[error("empty kernel neighborhood: no observation within bandwidth of the query point")]
    EmptyNeighborhood,

    #[error("quantile level {0} is never reached by the curve")]
    QuantileUnattained(f64),

    /// The at-risk mass vanishes before the requested time.
    #[error("degenerate tail: remaining at-risk mass {0:e} is too small")]
    DegenerateTail(f64),

    #[error("every bandwidth in the grid is infeasible")]
    AllInfeasible,

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("training loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),

    #[error("paired differences have zero variance")]
    ZeroVariance,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model serialization failed: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
