use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported dimension {0} (must be between 2 and {max})", max = crate::tol::MAX_DIM)]
    InvalidDimension(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("state is not normalized (norm^2 = {norm_sqr})")]
    NotNormalized { norm_sqr: f64 },

    #[error("operator is not Hermitian")]
    NotHermitian,

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("density-matrix invariant violated at step {step}: {reason}")]
    InvariantViolation { step: usize, reason: String },

    #[error("degenerate state: norm {norm} below threshold")]
    DegenerateState { norm: f64 },

    #[error("phase undefined: overlap modulus {modulus}")]
    UndefinedPhase { modulus: f64 },

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
