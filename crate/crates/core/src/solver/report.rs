//! Solve outputs: per-step diagnostics and the final report.

use ndarray::Array1;

use crate::error::McgError;

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    /// Step index (N down to 1).
    pub i: usize,
    /// `||W(y - H xhat_0)||` at this step, from the cached score.
    pub weighted_residual: f64,
    /// Fixed-point residual `||x - Q_i(x)||` of the manifold constraint.
    pub fixed_point_residual: f64,
    /// Normal-component fraction of the applied gradient, when a tangent
    /// basis was supplied and a gradient was taken.
    pub tangency_ratio: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub x0_hat: Array1<f64>,
    pub steps: Vec<StepDiagnostics>,
    /// Against the ground truth, when provided.
    pub mse: Option<f64>,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    /// `||y - H x0_hat||^2 / m`.
    pub mse_mc: f64,
    /// Score-network evaluations consumed.
    pub nfe_used: usize,
    pub seconds: f64,
}

/// A failed solve keeps the diagnostics accumulated before the failure.
#[derive(Debug)]
pub struct SolveFailure {
    pub error: McgError,
    pub steps: Vec<StepDiagnostics>,
}

impl std::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} recorded steps)", self.error, self.steps.len())
    }
}

impl std::error::Error for SolveFailure {}

impl From<SolveFailure> for McgError {
    fn from(f: SolveFailure) -> McgError {
        f.error
    }
}
