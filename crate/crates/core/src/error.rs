use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("not enough data: {0}")]
    EmptyData(String),
    #[error("non-finite value in input `{0}`")]
    NonFiniteInput(String),
    #[error("design matrix is rank deficient (condition estimate {condition:.3e} exceeds {limit:.1e})")]
    RankDeficient { condition: f64, limit: f64 },
    #[error("underdetermined: {0}")]
    Underdetermined(String),
    #[error("invalid degrees of freedom: {0}")]
    InvalidDegreesOfFreedom(String),
    #[error("regressor covariance matrix is singular")]
    SingularRegressorCovariance,
    #[error("regressor variance must be positive")]
    ZeroRegressorVariance,
    #[error("variances must be positive")]
    NonPositiveVariance,
    #[error("correlation {0} outside [-1, 1]")]
    OutOfRangeCorrelation(f64),
    #[error("covariance matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unknown ordering `{0}`")]
    UnknownOrdering(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("group too small: {0}")]
    GroupTooSmall(String),
    #[error("coefficient index {index} out of range for {len} coefficients")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("too few residuals: need at least {needed}, got {got}")]
    TooFewResiduals { needed: usize, got: usize },
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("pooled proportion is degenerate ({0})")]
    DegeneratePool(f64),
    #[error("too few strata: need at least 2, got {0}")]
    TooFewStrata(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("too few replications: need at least 1000, got {0}")]
    TooFewReplications(usize),
    #[error("inputs do not correspond: {0}")]
    MismatchedInputs(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
}

impl Error {
    /// True for failures caused by the data itself (singular designs, zero
    /// variance) rather than by malformed input.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::SingularRegressorCovariance
                | Error::ZeroRegressorVariance
                | Error::NotPositiveDefinite(_)
                | Error::DegeneratePool(_)
                | Error::Degenerate(_)
                | Error::GenerationFailed(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
