//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by quadrature construction, model evaluation, transforms,
/// the integration engine, and likelihood computations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("spectral density is singular at omega = 0 (alpha = {alpha}); evaluate the regular part instead")]
    SingularOrigin { alpha: f64 },

    #[error("model evaluation returned a non-finite value at omega = {omega}")]
    ModelEvaluation { omega: f64 },

    #[error("tail exponent beta = {beta} <= 1: spectral density is not integrable")]
    NonIntegrableTail { beta: f64 },

    #[error("requested NUFFT tolerance {requested:e} is unachievable (fine grid {fine_grid} exceeds the round-off wall); split the panel batch")]
    UnachievableTolerance { requested: f64, fine_grid: usize },

    #[error("adaptive refinement exhausted depth {depth} on [{a}, {b}]; the integrand may have a non-integrable feature there")]
    RefinementFailure { a: f64, b: f64, depth: usize },

    #[error("panel budget of {max_panels} exhausted at frontier {frontier}; {unconverged} distance(s) unconverged")]
    MaxPanelsExhausted {
        max_panels: usize,
        frontier: f64,
        unconverged: usize,
    },

    #[error("integration diverges: {0}")]
    Divergent(String),

    #[error("use the algebraic truncation bound instead: 2*pi*b*r = {arg} is below the continued-fraction regime")]
    UseBoundInstead { arg: f64 },

    #[error("gamma function pole at {argument} (from {context})")]
    GammaPole { argument: f64, context: String },

    #[error("working precision of {bits} bits is insufficient: {reason}")]
    PrecisionEscalation { bits: u32, reason: String },

    #[error("covariance matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("model config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
