//! Exact score of a finite-dataset mixture.
//!
//! For data points `x0^1 .. x0^K` the noised marginal at level `i` is
//! `p_i(x) = (1/K) sum_k N(x; a_i x0^k, b_i^2 I)`, and the exact score is the
//! softmax-weighted average `sum_k w_k(x) (a_i x0^k - x) / b_i^2`. This is the
//! exact minimizer of the denoising score-matching objective for the dataset,
//! and its Tweedie denoiser is the `w`-weighted average of the data points.
//!
//! Weights use log-sum-exp with per-query max subtraction so any `b_i` in the
//! schedule is safe; exponents below -700 are flushed to zero weight.

use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{McgError, Result};
use crate::schedule::Schedule;

use super::ScoreModel;

#[derive(Debug, Clone)]
pub struct EmpiricalMixtureScore {
    schedule: Arc<Schedule>,
    data: Array2<f64>,
}

impl EmpiricalMixtureScore {
    /// `data` is `K x n`, one training point per row.
    pub fn new(schedule: Arc<Schedule>, data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(McgError::parameter("mixture dataset must be non-empty"));
        }
        Ok(Self { schedule, data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Softmax posterior weights `w_k(x)` over the data points at level `i`.
    pub fn posterior_weights(&self, x: &Array1<f64>, i: usize) -> Array1<f64> {
        let a = self.schedule.a(i);
        let b2 = self.schedule.b(i) * self.schedule.b(i);
        let k = self.data.nrows();
        let mut logits = Array1::zeros(k);
        for kk in 0..k {
            let d = (&(a * &self.data.row(kk).to_owned()) - x).mapv(|v| v * v).sum();
            logits[kk] = -d / (2.0 * b2);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w = logits.mapv(|g| {
            let e = g - max;
            if e < -700.0 {
                0.0
            } else {
                e.exp()
            }
        });
        let z = w.sum();
        w.mapv_inplace(|v| v / z);
        w
    }
}

impl ScoreModel for EmpiricalMixtureScore {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    fn score(&self, x: &Array1<f64>, i: usize) -> Array1<f64> {
        let a = self.schedule.a(i);
        let b2 = self.schedule.b(i) * self.schedule.b(i);
        let w = self.posterior_weights(x, i);
        let mut s = Array1::zeros(x.len());
        for k in 0..self.data.nrows() {
            if w[k] == 0.0 {
                continue;
            }
            let u = (a * &self.data.row(k).to_owned() - x) / b2;
            s += &(w[k] * &u);
        }
        s
    }

    fn score_vjp(&self, x: &Array1<f64>, i: usize, v: &Array1<f64>) -> Array1<f64> {
        // J = sum_k w_k u_k u_k^T - s s^T - I / b^2 with u_k = (a x0^k - x)/b^2.
        // J is symmetric (a covariance minus a multiple of the identity), so
        // the VJP is J v.
        let a = self.schedule.a(i);
        let b2 = self.schedule.b(i) * self.schedule.b(i);
        let w = self.posterior_weights(x, i);
        let mut s = Array1::zeros(x.len());
        let mut cov_v = Array1::zeros(x.len());
        for k in 0..self.data.nrows() {
            if w[k] == 0.0 {
                continue;
            }
            let u = (a * &self.data.row(k).to_owned() - x) / b2;
            cov_v += &(w[k] * u.dot(v) * &u);
            s += &(w[k] * &u);
        }
        cov_v - s.dot(v) * &s - v / b2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::test_util::{fd_score_vjp, relative_error};
    use crate::score::GaussianSubspaceScore;
    use ndarray::array;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn sched() -> Arc<Schedule> {
        Arc::new(Schedule::vp(20, 1e-3, 0.3).unwrap())
    }

    #[test]
    fn single_component_is_single_gaussian_score() {
        let c = array![0.8, -0.4, 0.1];
        let data = Array2::from_shape_vec((1, 3), c.to_vec()).unwrap();
        let m = EmpiricalMixtureScore::new(sched(), data).unwrap();
        let x = array![1.0, 1.0, -1.0];
        for i in [1usize, 10, 20] {
            let a = m.schedule().a(i);
            let b2 = m.schedule().b(i) * m.schedule().b(i);
            let want = (a * &c - &x) / b2;
            let got = m.score(&x, i);
            assert!(relative_error(&got, &want) < 1e-14, "i={i}");
        }
    }

    #[test]
    fn single_component_vjp_is_scaled_negative_identity() {
        let data = Array2::from_shape_vec((1, 2), vec![0.3, 0.4]).unwrap();
        let m = EmpiricalMixtureScore::new(sched(), data).unwrap();
        let v = array![2.0, -5.0];
        for i in [1usize, 20] {
            let b2 = m.schedule().b(i) * m.schedule().b(i);
            let got = m.score_vjp(&array![0.1, 0.2], i, &v);
            let want = -&v / b2;
            assert!(relative_error(&got, &want) < 1e-12);
        }
    }

    #[test]
    fn tweedie_stays_in_convex_hull() {
        // K=3 points in 2D; the denoised point is their softmax-weighted
        // average, so it must reproduce from the explicit weights and lie in
        // the hull.
        let data =
            Array2::from_shape_vec((3, 2), vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = EmpiricalMixtureScore::new(sched(), data.clone()).unwrap();
        let mut rng = crate::rng::rng_from_seed(2);
        for i in [1usize, 10, 20] {
            for _ in 0..20 {
                let x = Array1::from_iter((0..2).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let w = m.posterior_weights(&x, i);
                let denoised = m.tweedie_denoise(&x, i);
                let mut expected = Array1::<f64>::zeros(2);
                for k in 0..3 {
                    expected += &(w[k] * &data.row(k).to_owned());
                }
                let err = (&denoised - &expected).mapv(|v| v * v).sum().sqrt();
                let scale = 1.0 + expected.mapv(|v| v * v).sum().sqrt();
                assert!(err < 1e-10 * scale, "err {err}");
                // Hull test for this simplex: barycentric coords nonnegative.
                assert!(denoised[0] >= -1e-12 && denoised[1] >= -1e-12);
                assert!(denoised[0] + denoised[1] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn tweedie_output_stays_in_data_subspace() {
        // All data in the span of (1, 1, 0) and (0, 0, 1): the denoiser is a
        // weighted average of data points, so outputs stay in the span.
        let data = Array2::from_shape_vec(
            (4, 3),
            vec![1.0, 1.0, 0.5, 2.0, 2.0, -0.3, -1.0, -1.0, 0.0, 0.5, 0.5, 1.0],
        )
        .unwrap();
        let m = EmpiricalMixtureScore::new(sched(), data).unwrap();
        let mut rng = crate::rng::rng_from_seed(9);
        for _ in 0..50 {
            let x = Array1::from_iter((0..3).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let d = m.tweedie_denoise(&x, 7);
            // Normal direction of the span is (1, -1, 0)/sqrt(2).
            let normal = (d[0] - d[1]) / 2f64.sqrt();
            assert!(normal.abs() < 1e-10, "normal component {normal}");
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = crate::rng::rng_from_seed(31);
        let data = Array2::from_shape_fn((5, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let m = EmpiricalMixtureScore::new(sched(), data).unwrap();
        for i in [2usize, 10, 20] {
            let x = Array1::from_iter((0..4).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let v = Array1::from_iter((0..4).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let got = m.score_vjp(&x, i, &v);
            let fd = fd_score_vjp(&m, &x, i, &v);
            let rel = relative_error(&got, &fd);
            assert!(rel < 1e-5, "i={i}: rel err {rel}");
        }
    }

    #[test]
    fn matches_gaussian_score_for_matching_moments() {
        // Sanity cross-check between the two oracles: with a single data
        // point the mixture equals a Gaussian-subspace model with tiny tau2
        // only in the b >> tau limit; check score agreement there.
        let sched = Arc::new(Schedule::ve(4, 1.0, 100.0).unwrap());
        let c = array![0.5, -0.5];
        let data = Array2::from_shape_vec((1, 2), c.to_vec()).unwrap();
        let mix = EmpiricalMixtureScore::new(sched.clone(), data).unwrap();
        let basis = Array2::from_shape_vec((2, 1), vec![1.0, 0.0]).unwrap();
        let gauss = GaussianSubspaceScore::new(sched, c.clone(), basis, 1e-14).unwrap();
        let x = array![1.3, 0.4];
        for i in 1..=4 {
            let a = relative_error(&mix.score(&x, i), &gauss.score(&x, i));
            assert!(a < 1e-9, "i={i}: {a}");
        }
    }

    #[test]
    fn stable_at_extreme_noise_levels() {
        let sched = Arc::new(Schedule::ve(2000, 0.01, 378.0).unwrap());
        let data = Array2::from_shape_vec((2, 2), vec![100.0, 0.0, -100.0, 0.0]).unwrap();
        let m = EmpiricalMixtureScore::new(sched, data).unwrap();
        for i in [1usize, 1000, 2000] {
            let s = m.score(&array![1e3, -1e3], i);
            assert!(s.iter().all(|v| v.is_finite()), "i={i}: {s}");
        }
    }

    #[test]
    fn rejects_empty_dataset() {
        assert!(EmpiricalMixtureScore::new(sched(), Array2::zeros((0, 2))).is_err());
    }
}
