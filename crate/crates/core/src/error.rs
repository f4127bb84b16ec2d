use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e}); design is singular or collinear")]
    NonPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("test index {index} out of range 1..={k_theta}")]
    IndexOutOfRange { index: usize, k_theta: usize },

    #[error("insufficient sample: n = {n} but the model has {params} parameters")]
    InsufficientSample { n: usize, params: usize },

    #[error("Gauss-Newton did not converge for index {index} after {iterations} iterations")]
    NoConvergence { index: usize, iterations: usize },

    #[error("no parsimonious fits supplied")]
    EmptyFits,

    #[error("standard error of index {index} is not positive")]
    NonpositiveSe { index: usize },

    #[error("{failed} of {total} bootstrap draws failed (budget is 1%)")]
    BootstrapDegenerate { failed: usize, total: usize },

    #[error("{failed} of {total} replications failed (budget is 1%); first failure: {first}")]
    TooManyFailedReplications { failed: usize, total: usize, first: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("{0} requires a linear response")]
    RequiresLinear(&'static str),

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures, as opposed to malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonPositiveDefinite { .. }
                | Error::NoConvergence { .. }
                | Error::NonpositiveSe { .. }
                | Error::BootstrapDegenerate { .. }
                | Error::TooManyFailedReplications { .. }
                | Error::InsufficientSample { .. }
        )
    }
}
