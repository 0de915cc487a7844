//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by schedule construction, operators, solvers, and I/O.
#[derive(Debug, Error)]
pub enum McgError {
    /// A constructor or operation received parameters outside its domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A step index fell outside `1..=N`.
    #[error("step index {index} out of range 1..={n}")]
    StepIndex { index: usize, n: usize },

    /// The conjugate-gradient solve inside a consistency step did not reach
    /// its tolerance within the iteration budget.
    #[error("consistency solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    ConsistencyNotConverged { residual: f64, iterations: usize },

    /// The sampler state became non-finite (or blew past the magnitude guard).
    #[error("sampler diverged at step {step}")]
    SamplerDivergence { step: usize },

    /// Training loss became non-finite.
    #[error("training diverged at iteration {iteration}")]
    TrainingDivergence { iteration: usize },

    /// The requested operation is not defined for this operator kind.
    #[error("unsupported operator kind for {0}")]
    UnsupportedKind(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file (mask, raw-float, spec, weights, ...).
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, McgError>;

impl McgError {
    pub fn parameter(msg: impl Into<String>) -> Self {
        McgError::Parameter(msg.into())
    }
}
