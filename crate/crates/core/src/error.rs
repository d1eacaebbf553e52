use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("model has no latent elements")]
    EmptyModel,
    #[error("random walk of order 2 needs at least 3 nodes, got {0}")]
    InsufficientLength(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("sparsity pattern differs from the analysed pattern")]
    PatternMismatch,
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("invalid model: {0}")]
    Validation(String),
    #[error("hyperparameter slot {slot}: {reason}")]
    HyperSlot { slot: usize, reason: String },
    #[error("Newton iteration did not converge after {iterations} iterations (last step {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("need at least {needed} evaluations, got {got}")]
    TooFewEvaluations { needed: usize, got: usize },
    #[error("empty support set")]
    EmptySupport,
    #[error("grid exploration exceeded {0} points; the hyperparameter mode is probably wrong")]
    RunawayGrid(usize),
    #[error("probability {0} outside the open interval (0, 1)")]
    InvalidProbability(f64),
    #[error("function is not strictly monotone on the support")]
    NonMonotone,
    #[error("marginal is multimodal at this level; high density set has segments {0:?}")]
    Multimodal(Vec<(f64, f64)>),
    #[error("predictive support holds only {achieved:.6} of the mass; widen the support")]
    WidenSupport { achieved: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("latent index {0} is not tracked")]
    UntrackedIndex(usize),
    #[error("every grid point has zero posterior mass")]
    AllPointsInvalid,
    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),
    #[error("objective is not finite at {0:?}")]
    NonFiniteObjective(Vec<f64>),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::EmptyModel
            | Error::InsufficientLength(_)
            | Error::DimensionMismatch { .. }
            | Error::IndexOutOfRange { .. }
            | Error::InvalidObservation(_)
            | Error::Validation(_)
            | Error::HyperSlot { .. }
            | Error::InvalidProbability(_)
            | Error::Unsupported(_)
            | Error::UntrackedIndex(_)
            | Error::InvalidMarginal(_)
            | Error::TooFewEvaluations { .. } => ErrorKind::Validation,
            _ => ErrorKind::Numerical,
        }
    }
}
