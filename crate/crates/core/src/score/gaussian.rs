//! Closed-form score of a Gaussian prior supported on an affine subspace.
//!
//! The prior is `N(mean, tau2 * T T^T)` with `T` an `n x l` column-orthonormal
//! basis, so clean data live on the affine subspace `mean + range(T)`. The
//! noised marginal at level `i` is `N(a_i mean, a_i^2 tau2 T T^T + b_i^2 I)`,
//! whose score splits along the tangent/normal decomposition of `x - a_i mean`
//! (a Woodbury identity in disguise):
//!
//! ```text
//! score(x, i) = -u_t / (a^2 tau2 + b^2) - u_n / b^2,
//!   u = x - a mean,  u_t = T T^T u,  u_n = u - u_t.
//! ```
//!
//! The Jacobian is the constant symmetric matrix
//! `-(T T^T / (a^2 tau2 + b^2) + (I - T T^T) / b^2)`, applied verbatim for
//! Jacobian-vector products.

use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{McgError, Result};
use crate::schedule::Schedule;

use super::ScoreModel;

#[derive(Debug, Clone)]
pub struct GaussianSubspaceScore {
    schedule: Arc<Schedule>,
    mean: Array1<f64>,
    basis: Array2<f64>,
    tau2: f64,
}

impl GaussianSubspaceScore {
    /// `basis` is `n x l` with orthonormal columns (checked to 1e-12);
    /// `tau2` is the tangent variance.
    pub fn new(
        schedule: Arc<Schedule>,
        mean: Array1<f64>,
        basis: Array2<f64>,
        tau2: f64,
    ) -> Result<Self> {
        let (n, l) = basis.dim();
        if mean.len() != n {
            return Err(McgError::DimensionMismatch {
                expected: n,
                got: mean.len(),
                context: "gaussian subspace mean",
            });
        }
        if l > n {
            return Err(McgError::parameter(format!(
                "basis has more columns ({l}) than rows ({n})"
            )));
        }
        if tau2 <= 0.0 {
            return Err(McgError::parameter("tangent variance must be positive"));
        }
        let gram = basis.t().dot(&basis);
        for r in 0..l {
            for c in 0..l {
                let want = if r == c { 1.0 } else { 0.0 };
                if (gram[(r, c)] - want).abs() > 1e-12 {
                    return Err(McgError::parameter(format!(
                        "basis columns not orthonormal: gram[{r},{c}] = {}",
                        gram[(r, c)]
                    )));
                }
            }
        }
        Ok(Self {
            schedule,
            mean,
            basis,
            tau2,
        })
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn subspace_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Tangent part `T T^T v`.
    pub fn tangent_component(&self, v: &Array1<f64>) -> Array1<f64> {
        self.basis.dot(&self.basis.t().dot(v))
    }

    /// Normal part `(I - T T^T) v`.
    pub fn normal_component(&self, v: &Array1<f64>) -> Array1<f64> {
        v - &self.tangent_component(v)
    }

    /// Applies the (symmetric) score Jacobian at level `i` to `v`.
    fn jacobian_apply(&self, i: usize, v: &Array1<f64>) -> Array1<f64> {
        let a = self.schedule.a(i);
        let b = self.schedule.b(i);
        let tangent_var = a * a * self.tau2 + b * b;
        let vt = self.tangent_component(v);
        let vn = v - &vt;
        -(vt / tangent_var + vn / (b * b))
    }
}

impl ScoreModel for GaussianSubspaceScore {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    fn score(&self, x: &Array1<f64>, i: usize) -> Array1<f64> {
        let u = x - &(self.schedule.a(i) * &self.mean);
        self.jacobian_apply(i, &u)
    }

    fn score_vjp(&self, _x: &Array1<f64>, i: usize, v: &Array1<f64>) -> Array1<f64> {
        self.jacobian_apply(i, v)
    }
}

/// Orthonormalize the columns of `m` (modified Gram-Schmidt). Columns that
/// become numerically dependent are rejected.
pub fn orthonormalize(mut m: Array2<f64>) -> Result<Array2<f64>> {
    let (_, l) = m.dim();
    for c in 0..l {
        for prev in 0..c {
            let proj = m.column(prev).dot(&m.column(c));
            let prev_col = m.column(prev).to_owned();
            let mut col = m.column_mut(c);
            col.zip_mut_with(&prev_col, |x, &p| *x -= proj * p);
        }
        let norm = m.column(c).dot(&m.column(c)).sqrt();
        if norm < 1e-10 {
            return Err(McgError::parameter("columns are linearly dependent"));
        }
        m.column_mut(c).mapv_inplace(|x| x / norm);
    }
    Ok(m)
}
