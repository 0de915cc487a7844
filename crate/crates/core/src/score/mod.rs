//! Score functions `s(x, i) ~ grad_x log p_i(x)` with Tweedie denoising and
//! exact Jacobian-vector products.
//!
//! Three concrete kinds:
//!
//! - [`GaussianSubspaceScore`] — closed-form score of a Gaussian supported on
//!   an `l`-dimensional affine subspace of `R^n`; the analytic oracle for the
//!   geometry checks.
//! - [`EmpiricalMixtureScore`] — exact score of the noised empirical
//!   distribution of a finite dataset; the exact minimizer of the denoising
//!   score-matching objective for that dataset.
//! - [`MlpScore`] — a small trainable MLP denoiser with sinusoidal timestep
//!   embedding and reverse-mode input gradients.

mod gaussian;
mod mixture;
mod mlp;
mod serialize;

pub use gaussian::{orthonormalize, GaussianSubspaceScore};
pub use mixture::EmpiricalMixtureScore;
pub use mlp::{train_dsm, Activation, MlpConfig, MlpScore, TrainOutcome};
pub use serialize::AnyScoreModel;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::schedule::Schedule;

/// An evaluable score function bound to a noise schedule.
///
/// `score` must return a finite vector of the same dimension as `x` for any
/// finite `x` and `i` in `1..=N`.
pub trait ScoreModel: Send + Sync {
    /// Signal dimension `n`.
    fn dim(&self) -> usize;

    /// The schedule whose `(a_i, b_i)` this model is calibrated to.
    fn schedule(&self) -> &Schedule;

    /// Score estimate at noise level `i`.
    fn score(&self, x: &Array1<f64>, i: usize) -> Array1<f64>;

    /// `(d score / d x)^T v` at `(x, i)`.
    fn score_vjp(&self, x: &Array1<f64>, i: usize, v: &Array1<f64>) -> Array1<f64>;

    /// Posterior-mean denoiser `Q_i(x) = (x + b_i^2 score(x, i)) / a_i`.
    fn tweedie_denoise(&self, x: &Array1<f64>, i: usize) -> Array1<f64> {
        let a = self.schedule().a(i);
        let b = self.schedule().b(i);
        (x + b * b * self.score(x, i)) / a
    }
}

/// Monte-Carlo estimate of the plain denoising score-matching loss
/// `E || s(x_i, i) - (a_i x0 - x_i) / b_i^2 ||^2` over `samples` draws with
/// `i` uniform, `x0` a uniform dataset row, and `x_i` a forward draw.
pub fn dsm_loss(
    model: &dyn ScoreModel,
    dataset: &Array2<f64>,
    seed: u64,
    samples: usize,
) -> f64 {
    let sched = model.schedule();
    let n = dataset.ncols();
    let mut rng = crate::rng::rng_for_stream(seed, 0x05);
    let mut acc = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(1..=sched.n());
        let row = rng.random_range(0..dataset.nrows());
        let x0 = dataset.row(row).to_owned();
        let z = Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let xi = sched.forward_diffuse(&x0, i, &z).expect("valid draw");
        let b = sched.b(i);
        let target = (sched.a(i) * &x0 - &xi) / (b * b);
        let s = model.score(&xi, i);
        acc += (&s - &target).mapv(|v| v * v).sum();
    }
    acc / samples as f64
}

/// The same loss for the zero score function, computed analytically:
/// `E || (a_i x0 - x_i) / b_i^2 ||^2 = n * mean_i (1 / b_i^2)`.
pub fn zero_score_dsm_baseline(sched: &Schedule, dim: usize) -> f64 {
    let mean_inv_b2 = (1..=sched.n()).map(|i| 1.0 / (sched.b(i) * sched.b(i))).sum::<f64>()
        / sched.n() as f64;
    dim as f64 * mean_inv_b2
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    /// Central finite difference of `v . score(x, i)` per input coordinate,
    /// which equals `(d score / d x)^T v` coordinate-wise.
    pub fn fd_score_vjp(
        model: &dyn ScoreModel,
        x: &Array1<f64>,
        i: usize,
        v: &Array1<f64>,
    ) -> Array1<f64> {
        let inf_norm = x.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
        let h = 1e-5 * (1.0 + inf_norm);
        let n = x.len();
        let mut out = Array1::zeros(n);
        for j in 0..n {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fp = v.dot(&model.score(&xp, i));
            let fm = v.dot(&model.score(&xm, i));
            out[j] = (fp - fm) / (2.0 * h);
        }
        out
    }

    pub fn relative_error(got: &Array1<f64>, want: &Array1<f64>) -> f64 {
        let num = (got - want).mapv(|v| v * v).sum().sqrt();
        let den = want.mapv(|v| v * v).sum().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}
