use thiserror::Error;

/// Errors raised by the kernels, the inverse-maintenance routines and the policies.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BanditError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular rank-one update (denominator {0:e})")]
    SingularUpdate(f64),
    #[error("near-singular extension (schur complement {0:e})")]
    NearSingularExtension(f64),
    #[error("matrix is not positive definite")]
    Factorization,
    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, BanditError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(BanditError::InvalidArgument(msg.into()))
}
