//! Numerical verification of the geometric structure behind the sampler:
//! concentration of noised data around the scaled manifold, the projector
//! structure of the Tweedie denoiser's Jacobian, and tangency of the
//! manifold-constrained gradient.
//!
//! Every check is deterministic given its seed and returns the measured
//! statistic together with the threshold it was held to.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{McgError, Result};
use crate::operators::{ForwardOperator, WeightKind};
use crate::rng;
use crate::schedule::Schedule;
use crate::score::ScoreModel;
use crate::solver::{naive_gradient, tweedie_from_score, RESIDUAL_GUARD};

/// Projector symmetry and range-containment threshold.
pub const PROJECTOR_TOL: f64 = 1e-10;
/// Tangency threshold for the manifold-constrained gradient.
pub const TANGENCY_TOL: f64 = 1e-8;
/// The naive gradient must leave the tangent space by at least this much on
/// the adversarial construction.
pub const NAIVE_RATIO_FLOOR: f64 = 0.1;

/// A linear manifold patch: `offset + range(tangent_basis)`.
#[derive(Debug, Clone)]
pub struct ManifoldSpec {
    pub n: usize,
    pub l: usize,
    pub tangent_basis: Array2<f64>,
    pub offset: Array1<f64>,
}

impl ManifoldSpec {
    pub fn new(tangent_basis: Array2<f64>, offset: Array1<f64>) -> Result<Self> {
        let (n, l) = tangent_basis.dim();
        if l >= n {
            return Err(McgError::parameter(format!(
                "manifold dimension {l} must be smaller than ambient {n}"
            )));
        }
        if offset.len() != n {
            return Err(McgError::DimensionMismatch {
                expected: n,
                got: offset.len(),
                context: "manifold offset",
            });
        }
        let gram = tangent_basis.t().dot(&tangent_basis);
        for r in 0..l {
            for c in 0..l {
                let want = if r == c { 1.0 } else { 0.0 };
                if (gram[(r, c)] - want).abs() > 1e-12 {
                    return Err(McgError::parameter("tangent basis not orthonormal"));
                }
            }
        }
        Ok(ManifoldSpec {
            n,
            l,
            tangent_basis,
            offset,
        })
    }

    /// Random orthonormal patch through the origin.
    pub fn random(n: usize, l: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::rng_for_stream(seed, 0x30);
        let raw = Array2::from_shape_fn((n, l), |_| rng.sample::<f64, _>(StandardNormal));
        let basis = crate::score::orthonormalize(raw)?;
        ManifoldSpec::new(basis, Array1::zeros(n))
    }

    pub fn normal_component(&self, v: &Array1<f64>) -> Array1<f64> {
        v - &self.tangent_basis.dot(&self.tangent_basis.t().dot(v))
    }
}

/// `epsilon` from `epsilon'` exactly as in the chi-square concentration
/// argument: `min(1 - sqrt(1 - 2 sqrt(e')), sqrt(1 + 2 sqrt(e') + 2 e') - 1)`.
pub fn concentration_epsilon(epsilon_prime: f64) -> Result<f64> {
    if !(0.0 < epsilon_prime && epsilon_prime < 0.25) {
        return Err(McgError::parameter(
            "epsilon' must lie in (0, 0.25) for the band construction",
        ));
    }
    let s = epsilon_prime.sqrt();
    let lo = 1.0 - (1.0 - 2.0 * s).sqrt();
    let hi = (1.0 + 2.0 * s + 2.0 * epsilon_prime).sqrt() - 1.0;
    Ok(lo.min(hi))
}

/// `delta = 2 exp(-(n - l) epsilon')`.
pub fn concentration_delta(codim: usize, epsilon_prime: f64) -> f64 {
    2.0 * (-(codim as f64) * epsilon_prime).exp()
}

#[derive(Debug, Clone)]
pub struct ConcentrationResult {
    pub i: usize,
    /// `r_i = b_i sqrt(n - l)`.
    pub r_i: f64,
    pub epsilon_band: f64,
    pub delta_target: f64,
    pub empirical_fraction_in_band: f64,
    pub sample_count: usize,
    pub passed: bool,
}

/// Draws noised manifold points and measures how many land inside the band
/// `(r_i (1 - eps), r_i (1 + eps))` of normal distance, against the
/// `1 - delta` bound.
pub fn check_concentration(
    spec: &ManifoldSpec,
    sched: &Schedule,
    i: usize,
    samples: usize,
    epsilon_prime: f64,
    patch_halfwidth: f64,
    seed: u64,
) -> Result<ConcentrationResult> {
    if samples < 1000 {
        return Err(McgError::parameter("concentration check needs >= 1000 samples"));
    }
    let epsilon = concentration_epsilon(epsilon_prime)?;
    let delta = concentration_delta(spec.n - spec.l, epsilon_prime);
    let (a, b) = (sched.a(i), sched.b(i));
    let r_i = b * ((spec.n - spec.l) as f64).sqrt();
    let mut rng = rng::rng_for_stream(seed, 0x31);
    let mut inside = 0usize;
    for _ in 0..samples {
        // x0 on the patch; only its normal statistics matter.
        let coords = Array1::from_iter(
            (0..spec.l).map(|_| rng.random_range(-patch_halfwidth..patch_halfwidth)),
        );
        let x0 = &spec.offset + &spec.tangent_basis.dot(&coords);
        let z = Array1::from_iter((0..spec.n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let xi = sched.forward_diffuse(&x0, i, &z)?;
        let normal = spec.normal_component(&(&xi - &(a * &spec.offset)));
        let dist = normal.dot(&normal).sqrt();
        if dist > r_i * (1.0 - epsilon) && dist < r_i * (1.0 + epsilon) {
            inside += 1;
        }
    }
    let fraction = inside as f64 / samples as f64;
    Ok(ConcentrationResult {
        i,
        r_i,
        epsilon_band: epsilon,
        delta_target: delta,
        empirical_fraction_in_band: fraction,
        sample_count: samples,
        passed: fraction > 1.0 - delta,
    })
}

#[derive(Debug, Clone)]
pub struct ProjectorCheck {
    pub i: usize,
    pub noise_level: f64,
    /// `||J - J^T||_F / ||J||_F`, max over queries.
    pub symmetry_gap: f64,
    /// `||J^2 - J||_F`, max over queries.
    pub idempotence_gap: f64,
    /// Largest normal fraction of `J v` over random probes.
    pub max_normal_ratio: f64,
    pub passed: bool,
    /// Denoiser Jacobian at the last query (row-assembled from VJPs).
    pub jacobian: Array2<f64>,
}

/// Assemble the full Jacobian of `Q_i` row by row from vector-Jacobian
/// products on basis vectors.
pub fn assemble_denoiser_jacobian(
    model: &dyn ScoreModel,
    x: &Array1<f64>,
    i: usize,
) -> Array2<f64> {
    let n = model.dim();
    let a = model.schedule().a(i);
    let b = model.schedule().b(i);
    let mut j = Array2::zeros((n, n));
    for row in 0..n {
        let mut e = Array1::zeros(n);
        e[row] = 1.0;
        // J_Q^T e = (e + b^2 J_s^T e) / a is the row of J_Q.
        let v = (&e + &(b * b * model.score_vjp(x, i, &e))) / a;
        j.row_mut(row).assign(&v);
    }
    j
}

/// Measures symmetry, idempotence gap, and range containment of the
/// denoiser Jacobian at random query points.
pub fn check_projector(
    spec: &ManifoldSpec,
    model: &dyn ScoreModel,
    i: usize,
    queries: usize,
    seed: u64,
) -> ProjectorCheck {
    let mut rng = rng::rng_for_stream(seed, 0x32);
    let n = spec.n;
    let mut symmetry_gap = 0.0f64;
    let mut idempotence_gap = 0.0f64;
    let mut max_normal_ratio = 0.0f64;
    let mut jacobian = Array2::zeros((n, n));
    for _ in 0..queries.max(1) {
        let x = Array1::from_iter((0..n).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)));
        let j = assemble_denoiser_jacobian(model, &x, i);
        let j_norm = j.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let sym = (&j - &j.t()).iter().map(|v| v * v).sum::<f64>().sqrt() / j_norm;
        let jj = j.dot(&j);
        let idem = (&jj - &j).iter().map(|v| v * v).sum::<f64>().sqrt();
        symmetry_gap = symmetry_gap.max(sym);
        idempotence_gap = idempotence_gap.max(idem);
        for _ in 0..10 {
            let v = Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let jv = j.dot(&v);
            let norm = jv.dot(&jv).sqrt();
            if norm > 1e-14 {
                let normal = spec.normal_component(&jv);
                max_normal_ratio = max_normal_ratio.max(normal.dot(&normal).sqrt() / norm);
            }
        }
        jacobian = j;
    }
    ProjectorCheck {
        i,
        noise_level: model.schedule().b(i),
        symmetry_gap,
        idempotence_gap,
        max_normal_ratio,
        passed: symmetry_gap <= PROJECTOR_TOL && max_normal_ratio <= PROJECTOR_TOL,
        jacobian,
    }
}

/// Which deliberate defect to inject into the tangency check's gradient.
/// `NegateVjpTerm` flips the sign of the score-Jacobian term; the check must
/// then fail, which validates that the check can detect a broken gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMutation {
    None,
    NegateVjpTerm,
}

#[derive(Debug, Clone)]
pub struct TangencyCheck {
    pub i: usize,
    /// Max over queries of the constrained gradient's normal fraction.
    pub max_mcg_ratio: f64,
    /// Max over queries of the naive gradient's normal fraction.
    pub max_naive_ratio: f64,
    pub passed: bool,
}

/// Compares the normal component of the manifold-constrained gradient
/// against the naive measurement gradient at random noisy queries.
#[allow(clippy::too_many_arguments)]
pub fn check_tangency(
    spec: &ManifoldSpec,
    model: &dyn ScoreModel,
    op: &ForwardOperator,
    weight: WeightKind,
    y: &Array1<f64>,
    i: usize,
    queries: usize,
    seed: u64,
    mutation: GradientMutation,
) -> Result<TangencyCheck> {
    let mut rng = rng::rng_for_stream(seed, 0x33);
    let sched = model.schedule();
    let (a, b) = (sched.a(i), sched.b(i));
    let mut max_mcg = 0.0f64;
    let mut max_naive = 0.0f64;
    for _ in 0..queries.max(1) {
        let x = Array1::from_iter((0..spec.n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let score = model.score(&x, i);
        let xhat0 = tweedie_from_score(model, &x, &score, i);
        let raw = y - &op.apply(&xhat0)?;
        let r_w = weight.apply(op, &raw)?;
        let r_norm = r_w.dot(&r_w).sqrt();
        // Ratio 0 by convention at zero residual.
        if r_norm >= RESIDUAL_GUARD {
            let core = -2.0 * &op.apply_transpose(&weight.apply_transpose(op, &r_w)?)?;
            let vjp = model.score_vjp(&x, i, &core);
            let grad = match mutation {
                GradientMutation::None => (&core + &(b * b * &vjp)) / a,
                GradientMutation::NegateVjpTerm => (&core - &(b * b * &vjp)) / a,
            };
            let norm = grad.dot(&grad).sqrt();
            if norm > 1e-14 {
                let normal = spec.normal_component(&grad);
                max_mcg = max_mcg.max(normal.dot(&normal).sqrt() / norm);
            }
        }
        let (ngrad, nr) = naive_gradient(op, weight, &x, y)?;
        if nr >= RESIDUAL_GUARD {
            let norm = ngrad.dot(&ngrad).sqrt();
            if norm > 1e-14 {
                let normal = spec.normal_component(&ngrad);
                max_naive = max_naive.max(normal.dot(&normal).sqrt() / norm);
            }
        }
    }
    Ok(TangencyCheck {
        i,
        max_mcg_ratio: max_mcg,
        max_naive_ratio: max_naive,
        passed: max_mcg <= TANGENCY_TOL,
    })
}

/// An operator measuring a single direction orthogonal to the manifold: the
/// adversarial construction on which the naive gradient is fully normal.
pub fn normal_direction_operator(spec: &ManifoldSpec, seed: u64) -> Result<ForwardOperator> {
    let mut rng = rng::rng_for_stream(seed, 0x34);
    let v = Array1::from_iter((0..spec.n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let normal = spec.normal_component(&v);
    let norm = normal.dot(&normal).sqrt();
    if norm < 1e-10 {
        return Err(McgError::parameter("manifold has no normal directions"));
    }
    let row = normal / norm;
    let mut matrix = Array2::zeros((1, spec.n));
    matrix.row_mut(0).assign(&row);
    Ok(ForwardOperator::Dense(crate::operators::DenseOperator::new(
        matrix,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::InpaintingMask;
    use crate::score::GaussianSubspaceScore;
    use std::sync::Arc;

    #[test]
    fn epsilon_and_delta_match_hand_computation() {
        // e' = 0.01: min(1 - sqrt(0.8), sqrt(1.22) - 1) = sqrt(1.22) - 1.
        let eps = concentration_epsilon(0.01).unwrap();
        assert!((eps - (1.22f64.sqrt() - 1.0)).abs() < 1e-15);
        let delta = concentration_delta(396, 0.01);
        assert!((delta - 2.0 * (-3.96f64).exp()).abs() < 1e-15);
        assert!(concentration_epsilon(0.3).is_err());
    }

    #[test]
    fn radius_formula() {
        // n=50, l=5, b=2 -> r = 2 sqrt(45).
        let sched = Schedule::ve(3, 0.5, 8.0).unwrap();
        let spec = ManifoldSpec::random(50, 5, 1).unwrap();
        let r = check_concentration(&spec, &sched, 2, 1000, 0.01, 5.0, 1)
            .unwrap()
            .r_i;
        assert!((r - sched.b(2) * 45f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_manifold() {
        use ndarray::Array2;
        let basis = Array2::eye(4);
        assert!(ManifoldSpec::new(basis, Array1::zeros(4)).is_err());
    }

    #[test]
    fn concentration_holds_on_moderate_instance() {
        let spec = ManifoldSpec::random(100, 2, 7).unwrap();
        let sched = Schedule::vp(100, 1e-3, 0.1).unwrap();
        let res = check_concentration(&spec, &sched, 50, 20_000, 0.01, 5.0, 3).unwrap();
        assert!(
            res.passed,
            "fraction {} vs bound {}",
            res.empirical_fraction_in_band,
            1.0 - res.delta_target
        );
        assert!(check_concentration(&spec, &sched, 50, 10, 0.01, 5.0, 3).is_err());
    }

    fn gaussian_setup(
        n: usize,
        l: usize,
    ) -> (ManifoldSpec, GaussianSubspaceScore, Arc<Schedule>) {
        let spec = ManifoldSpec::random(n, l, 11).unwrap();
        let sched = Arc::new(Schedule::ve(3, 0.01, 1.0).unwrap());
        let model = GaussianSubspaceScore::new(
            sched.clone(),
            spec.offset.clone(),
            spec.tangent_basis.clone(),
            1.0,
        )
        .unwrap();
        (spec, model, sched)
    }

    #[test]
    fn projector_check_matches_closed_form() {
        let (spec, model, sched) = gaussian_setup(12, 3);
        for i in 1..=3 {
            let check = check_projector(&spec, &model, i, 3, 5);
            assert!(check.passed, "i={i}: {check:?}");
            // Closed form J = c T T^T with c = tau^2 / (tau^2 + b^2).
            let b = sched.b(i);
            let c = 1.0 / (1.0 + b * b);
            let closed = c * &spec.tangent_basis.dot(&spec.tangent_basis.t());
            let gap = (&check.jacobian - &closed)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!(gap <= 1e-8, "i={i}: closed-form gap {gap}");
            // Idempotence gap has closed form c(1-c) sqrt(l).
            let want = c * (1.0 - c) * (3f64).sqrt();
            assert!((check.idempotence_gap - want).abs() < 1e-8);
        }
        // The gap shrinks strictly as the noise level drops: b = 1, 0.1, 0.01.
        let gaps: Vec<f64> = (1..=3)
            .rev()
            .map(|i| check_projector(&spec, &model, i, 1, 5).idempotence_gap)
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn tangency_check_passes_and_mutation_fails() {
        let (spec, model, _) = gaussian_setup(16, 4);
        let op =
            ForwardOperator::Inpainting(InpaintingMask::new(16, (0..8).collect()).unwrap());
        let mut rng = crate::rng::rng_from_seed(2);
        use rand_distr::StandardNormal;
        let y = Array1::from_iter((0..8).map(|_| rng.sample::<f64, _>(StandardNormal)));
        for i in 1..=3 {
            let ok = check_tangency(
                &spec,
                &model,
                &op,
                WeightKind::Identity,
                &y,
                i,
                20,
                9,
                GradientMutation::None,
            )
            .unwrap();
            assert!(ok.passed, "i={i}: {ok:?}");
            let broken = check_tangency(
                &spec,
                &model,
                &op,
                WeightKind::Identity,
                &y,
                i,
                20,
                9,
                GradientMutation::NegateVjpTerm,
            )
            .unwrap();
            assert!(!broken.passed, "i={i}: mutation must break tangency");
        }
    }

    #[test]
    fn naive_gradient_is_fully_normal_on_adversarial_operator() {
        let (spec, model, _) = gaussian_setup(16, 4);
        let op = normal_direction_operator(&spec, 3).unwrap();
        let y = Array1::from_vec(vec![0.7]);
        let check = check_tangency(
            &spec,
            &model,
            &op,
            WeightKind::Identity,
            &y,
            2,
            10,
            4,
            GradientMutation::None,
        )
        .unwrap();
        assert!(check.max_naive_ratio >= NAIVE_RATIO_FLOOR, "{check:?}");
        assert!(check.max_naive_ratio > 0.999, "{check:?}");
        assert!(check.passed);
    }

    #[test]
    fn zero_residual_reports_zero_ratio() {
        let (spec, model, _) = gaussian_setup(10, 2);
        // y matches H xhat_0 for every query only if H annihilates the
        // denoised point; measuring a normal direction of a zero-offset
        // manifold does exactly that.
        let op = normal_direction_operator(&spec, 5).unwrap();
        let y = Array1::zeros(1);
        // xhat_0 lies on the manifold, so H xhat_0 ~ 0 ~ y at small noise.
        let check = check_tangency(
            &spec,
            &model,
            &op,
            WeightKind::Identity,
            &y,
            1,
            5,
            6,
            GradientMutation::None,
        )
        .unwrap();
        assert_eq!(check.max_mcg_ratio, 0.0);
    }
}
