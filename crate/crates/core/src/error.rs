use thiserror::Error;

/// Errors raised by the simulation and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown builtin potential `{0}`")]
    UnknownBuiltin(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("no convergence after {iterations} iterations ({context})")]
    NoConvergence {
        iterations: usize,
        context: &'static str,
    },

    #[error("converged to a critical point that is not a minimum (smallest Hessian eigenvalue {min_eigenvalue:.3e})")]
    NotAMinimum { min_eigenvalue: f64 },

    #[error("the attractor does not lie inside the domain")]
    AttractorOutsideDomain,

    #[error("domain is empty after deflation by {0}")]
    EmptyDomain(f64),

    #[error("could not sample the boundary: {0}")]
    BoundarySampling(String),

    #[error("step cap of {0} steps exceeded")]
    StepCapExceeded(u64),

    #[error("deterministic path leaves the domain at t = {time:.6} (assumption A-6 violated)")]
    PathLeavesDomain { time: f64 },

    #[error("margin condition failed: path comes within {margin:.6} of the boundary, need > {required:.6}")]
    MarginTooSmall { margin: f64, required: f64 },

    #[error("ensemble blew up at t = {time:.6}; the time step is likely too large")]
    BlowUp { time: f64 },

    #[error("mean-field linear mode requires a quadratic (or vanishing) interaction")]
    NonLinearInteraction,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
