use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("observation has zero likelihood under both device states")]
    ImpossibleObservation,

    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityDomain(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("case {0} requires a fitted variational posterior")]
    MissingPosterior(char),

    #[error("case {0} has no latent shed/mismatch to infer")]
    UnsupportedCase(char),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("subsidy bound not found below {cap:e}")]
    SubsidyBoundExceeded { cap: f64 },

    #[error(
        "repair threshold increased with subsidy: index {low_index:?} at mu={low_mu} but {high_index:?} at mu={high_mu}"
    )]
    NonMonotoneThreshold {
        low_mu: f64,
        low_index: Option<usize>,
        high_mu: f64,
        high_index: Option<usize>,
    },

    #[error("policy `{0}` requires identical repair costs")]
    RequiresIdenticalCosts(&'static str),

    #[error("missing index table for ADR {0}")]
    MissingIndexTable(usize),

    #[error("fleet tables were built with seed {built} but simulation requested seed {requested}")]
    SeedConflict { built: u64, requested: u64 },

    #[error("continuation cache: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
