use thiserror::Error;

pub type Result<T> = std::result::Result<T, CovError>;

#[derive(Debug, Error)]
pub enum CovError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    /// A feature with zero sample variance.
    #[error("feature {index} has zero sample variance")]
    DegenerateFeature { index: usize },

    /// A feature pair whose 2x2 scatter matrix is singular.
    #[error("scatter matrix of features ({j}, {k}) is singular")]
    DegeneratePair { j: usize, k: usize },

    #[error("sample covariance is already a multiple of the identity")]
    DegenerateSpread,

    #[error("all-zero data leaves the shrinkage scale undefined")]
    UndefinedScale,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Broad failure classes, used to pick CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl CovError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CovError::Config(_) | CovError::Json(_) | CovError::InvalidParameter(_) => ErrorClass::Config,
            CovError::Dimension(_)
            | CovError::NonFinite(_)
            | CovError::NotSymmetric { .. }
            | CovError::DegenerateFeature { .. }
            | CovError::DegeneratePair { .. }
            | CovError::UndefinedScale
            | CovError::Data(_)
            | CovError::Io(_)
            | CovError::Csv(_) => ErrorClass::Data,
            CovError::DegenerateSpread | CovError::NotPositiveDefinite | CovError::Numeric(_) => ErrorClass::Numeric,
        }
    }
}
