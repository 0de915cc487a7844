//! Linear forward operators `H` with adjoints, pseudo-inverses, and the
//! measurement-consistency projection used by the conditional samplers.
//!
//! The consistency step realizes `x <- A x + b(y)` with
//! `A = I - H^T (H H^T)^† H` and `b = H^T (H H^T)^† y`. For operators with
//! orthonormal rows (`H H^T = I`) this reduces to `x - H^T H x + H^T y`; for
//! tomography the `(H H^T)^†` solve runs conjugate gradients, which is the
//! algebraic reconstruction technique form of the update.

mod cg;
mod color;
mod dense;
mod gram;
mod inpaint;
mod radon;

pub use cg::{conjugate_gradient, preconditioned_conjugate_gradient, CgOutcome};
pub use gram::{GramFactor, GRAM_RANGE_TOL};
pub use color::ColorCoupling;
pub use dense::DenseOperator;
pub use inpaint::InpaintingMask;
pub use radon::RadonTransform;

use ndarray::Array1;

use crate::error::{McgError, Result};
use crate::schedule::Schedule;

/// Relative tolerance of the `(H H^T)^†` conjugate-gradient solve.
pub const CONSISTENCY_CG_TOL: f64 = 1e-8;
/// Iteration budget of that solve.
pub const CONSISTENCY_CG_MAX_ITER: usize = 500;

/// A linear measurement map with transpose and consistency machinery.
#[derive(Debug, Clone)]
pub enum ForwardOperator {
    Inpainting(InpaintingMask),
    ColorCoupling(ColorCoupling),
    Radon(RadonTransform),
    Dense(DenseOperator),
}

impl ForwardOperator {
    pub fn m(&self) -> usize {
        match self {
            ForwardOperator::Inpainting(p) => p.m(),
            ForwardOperator::ColorCoupling(c) => c.m(),
            ForwardOperator::Radon(r) => r.m(),
            ForwardOperator::Dense(d) => d.m(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            ForwardOperator::Inpainting(p) => p.n(),
            ForwardOperator::ColorCoupling(c) => c.n(),
            ForwardOperator::Radon(r) => r.n(),
            ForwardOperator::Dense(d) => d.n(),
        }
    }

    /// `H H^T = I` holds exactly for the selection-style operators.
    pub fn has_orthonormal_rows(&self) -> bool {
        matches!(
            self,
            ForwardOperator::Inpainting(_) | ForwardOperator::ColorCoupling(_)
        )
    }

    fn check_signal(&self, x: &Array1<f64>) -> Result<()> {
        if x.len() != self.n() {
            return Err(McgError::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
                context: "operator signal",
            });
        }
        Ok(())
    }

    fn check_measurement(&self, y: &Array1<f64>) -> Result<()> {
        if y.len() != self.m() {
            return Err(McgError::DimensionMismatch {
                expected: self.m(),
                got: y.len(),
                context: "operator measurement",
            });
        }
        Ok(())
    }

    /// `y = H x`.
    pub fn apply(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        self.check_signal(x)?;
        Ok(match self {
            ForwardOperator::Inpainting(p) => p.apply(x),
            ForwardOperator::ColorCoupling(c) => c.apply(x),
            ForwardOperator::Radon(r) => r.apply(x),
            ForwardOperator::Dense(d) => d.apply(x),
        })
    }

    /// `x = H^T y` (unfiltered backprojection for tomography).
    pub fn apply_transpose(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        self.check_measurement(y)?;
        Ok(match self {
            ForwardOperator::Inpainting(p) => p.apply_transpose(y),
            ForwardOperator::ColorCoupling(c) => c.apply_transpose(y),
            ForwardOperator::Radon(r) => r.apply_transpose(y),
            ForwardOperator::Dense(d) => d.apply_transpose(y),
        })
    }

    /// Measurement-consistency projection `A x' + b(y_i)`. After it,
    /// `H . result = y_i` exactly for orthonormal-row operators and to the
    /// conjugate-gradient tolerance otherwise.
    pub fn consistency_step(&self, x_prime: &Array1<f64>, y_i: &Array1<f64>) -> Result<Array1<f64>> {
        self.check_signal(x_prime)?;
        self.check_measurement(y_i)?;
        if self.has_orthonormal_rows() {
            let hx = self.apply(x_prime)?;
            return Ok(x_prime - &self.apply_transpose(&hx)? + self.apply_transpose(y_i)?);
        }
        // x' + H^T (H H^T)^† (y - H x'), one CG solve on the residual. The
        // gram is near-singular for tomography, so the solve is
        // preconditioned by a cached Cholesky factor when one is available.
        let residual = y_i - &self.apply(x_prime)?;
        // Absolute floor: once the measurement residual is this small the
        // state counts as consistent and the step is a no-op, which is what
        // makes repeated application idempotent.
        let atol = CONSISTENCY_CG_TOL * (1.0 + y_i.dot(y_i).sqrt());
        if residual.dot(&residual).sqrt() <= atol {
            return Ok(x_prime.clone());
        }
        let gram = |q: &Array1<f64>| {
            let back = self.apply_transpose(q).expect("dims fixed");
            self.apply(&back).expect("dims fixed")
        };
        let factor = match self {
            ForwardOperator::Radon(r) => r.gram_factor(),
            ForwardOperator::Dense(d) => d.gram_factor(),
            _ => None,
        };
        let (u, outcome) = match factor {
            // Direct solve with the rank-truncated factor, polished by
            // iterative refinement against the true gram. The truncated
            // solver returns zero along null directions, so refinement never
            // amplifies rounding noise the way a Krylov step would.
            Some(f) => {
                // Noised targets are generally infeasible (measurement noise
                // has components outside range(H)); only the retained-range
                // part of the residual is solvable, so convergence is
                // measured there. The unsolvable remainder stays in the
                // measurement residual by design.
                let range_b = f.range_coordinates(&residual);
                let range_b_norm = range_b.dot(&range_b).sqrt();
                let mut u = f.solve(&residual);
                let mut iterations = 0;
                let mut rel = 0.0;
                let mut converged = true;
                if range_b_norm > 0.0 {
                    loop {
                        let r = &residual - &gram(&u);
                        let range_r = f.range_coordinates(&r);
                        let abs = r.dot(&r).sqrt();
                        rel = range_r.dot(&range_r).sqrt() / range_b_norm;
                        converged = rel <= GRAM_RANGE_TOL || abs <= atol;
                        if converged || iterations >= CONSISTENCY_CG_MAX_ITER {
                            break;
                        }
                        u += &f.solve(&r);
                        iterations += 1;
                    }
                }
                (
                    u,
                    CgOutcome {
                        iterations,
                        relative_residual: rel,
                        converged,
                    },
                )
            }
            None => conjugate_gradient(
                gram,
                &residual,
                CONSISTENCY_CG_TOL,
                CONSISTENCY_CG_MAX_ITER,
            ),
        };
        if !outcome.converged {
            return Err(McgError::ConsistencyNotConverged {
                residual: outcome.relative_residual,
                iterations: outcome.iterations,
            });
        }
        Ok(x_prime + &self.apply_transpose(&u)?)
    }

    /// `H^† y`: the transpose for orthonormal-row operators, filtered
    /// backprojection for tomography. Not defined for dense operators.
    pub fn pseudo_inverse_apply(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        self.check_measurement(y)?;
        match self {
            ForwardOperator::Inpainting(p) => Ok(p.apply_transpose(y)),
            ForwardOperator::ColorCoupling(c) => Ok(c.apply_transpose(y)),
            ForwardOperator::Radon(r) => Ok(r.fbp(y)),
            ForwardOperator::Dense(_) => Err(McgError::UnsupportedKind("pseudo_inverse_apply")),
        }
    }
}

/// Noise-level-matched measurement draw `y_i = a_i y + b_i noise`.
pub fn sample_y_i(
    sched: &Schedule,
    y: &Array1<f64>,
    i: usize,
    noise: &Array1<f64>,
) -> Result<Array1<f64>> {
    if i < 1 || i > sched.n() {
        return Err(McgError::StepIndex { index: i, n: sched.n() });
    }
    if y.len() != noise.len() {
        return Err(McgError::DimensionMismatch {
            expected: y.len(),
            got: noise.len(),
            context: "sample_y_i noise",
        });
    }
    Ok(sched.a(i) * y + sched.b(i) * noise)
}

/// The residual weighting `W` in `||W(y - H x)||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// `W = I` (inpainting).
    Identity,
    /// `W = H^T` (colorization).
    OperatorTranspose,
    /// `W = H^†` (tomography).
    PseudoInverse,
}

impl WeightKind {
    /// `W r` for an `m`-vector residual `r`.
    pub fn apply(&self, op: &ForwardOperator, r: &Array1<f64>) -> Result<Array1<f64>> {
        match self {
            WeightKind::Identity => Ok(r.clone()),
            WeightKind::OperatorTranspose => op.apply_transpose(r),
            WeightKind::PseudoInverse => op.pseudo_inverse_apply(r),
        }
    }

    /// `W^T v`.
    pub fn apply_transpose(&self, op: &ForwardOperator, v: &Array1<f64>) -> Result<Array1<f64>> {
        match self {
            WeightKind::Identity => Ok(v.clone()),
            WeightKind::OperatorTranspose => op.apply(v),
            WeightKind::PseudoInverse => match op {
                // H^† = H^T for orthonormal rows, self-adjoint pairing.
                ForwardOperator::Inpainting(_) | ForwardOperator::ColorCoupling(_) => op.apply(v),
                ForwardOperator::Radon(r) => Ok(r.fbp_transpose(v)),
                ForwardOperator::Dense(_) => Err(McgError::UnsupportedKind("weight transpose")),
            },
        }
    }
}
