//! Measurement gradients: the manifold-constrained gradient through the
//! Tweedie denoiser, the matched-noise ablation gradient through the sampler
//! step, and the naive gradient that ignores denoising entirely.

use ndarray::Array1;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::operators::{ForwardOperator, WeightKind};
use crate::schedule::ReverseCoeffs;
use crate::score::ScoreModel;

/// Residual norms below this skip the gradient (guards the `alpha'/||r||`
/// normalization).
pub const RESIDUAL_GUARD: f64 = 1e-12;

/// Tweedie denoising from an already-computed score.
pub fn tweedie_from_score(
    model: &dyn ScoreModel,
    x: &Array1<f64>,
    score: &Array1<f64>,
    i: usize,
) -> Array1<f64> {
    let a = model.schedule().a(i);
    let b = model.schedule().b(i);
    (x + b * b * score) / a
}

/// Gradient of `||W(y - H xhat_0(x_i))||^2` with respect to `x_i`, reusing a
/// cached score evaluation. Returns `(gradient, ||W(y - H xhat_0)||)`.
///
/// The chain rule through `Q_i(x) = (x + b^2 s(x)) / a` gives
/// `grad = -(2/a) (I + b^2 J_s^T) H^T W^T r_w`; with `stop_gradient` the
/// score-Jacobian term is dropped (ablation only).
pub fn mcg_gradient_with_score(
    model: &dyn ScoreModel,
    op: &ForwardOperator,
    weight: WeightKind,
    x: &Array1<f64>,
    score: &Array1<f64>,
    i: usize,
    y: &Array1<f64>,
    stop_gradient: bool,
) -> Result<(Array1<f64>, f64)> {
    let a = model.schedule().a(i);
    let b = model.schedule().b(i);
    let xhat0 = tweedie_from_score(model, x, score, i);
    let raw = y - &op.apply(&xhat0)?;
    let r_w = weight.apply(op, &raw)?;
    let r_norm = r_w.dot(&r_w).sqrt();
    let core = -2.0 * &op.apply_transpose(&weight.apply_transpose(op, &r_w)?)?;
    let grad = if stop_gradient {
        core / a
    } else {
        (&core + &(b * b * model.score_vjp(x, i, &core))) / a
    };
    Ok((grad, r_norm))
}

/// As [`mcg_gradient_with_score`], evaluating the score internally.
pub fn mcg_gradient(
    model: &dyn ScoreModel,
    op: &ForwardOperator,
    weight: WeightKind,
    x: &Array1<f64>,
    i: usize,
    y: &Array1<f64>,
) -> Result<(Array1<f64>, f64)> {
    let score = model.score(x, i);
    mcg_gradient_with_score(model, op, weight, x, &score, i, y, false)
}

/// Gradient of `||y_level - H x'||^2` with respect to `x_i`, where
/// `x' = f(x_i, s(x_i)) + g z` is the unconditional step with frozen noise
/// `z` and `y_level` a frozen measurement draw. Returns
/// `(gradient, ||y_level - H x'||, x')`.
pub fn matched_noise_gradient_at(
    model: &dyn ScoreModel,
    op: &ForwardOperator,
    coeffs: &ReverseCoeffs,
    x: &Array1<f64>,
    score: &Array1<f64>,
    i: usize,
    y_level: &Array1<f64>,
    z: &Array1<f64>,
) -> Result<(Array1<f64>, f64, Array1<f64>)> {
    let x_prime = coeffs.deterministic(x, score) + coeffs.noise_scale() * z;
    let r = y_level - &op.apply(&x_prime)?;
    let r_norm = r.dot(&r).sqrt();
    // d x'/d x = c_x I + c_s J_s.
    let core = -2.0 * &op.apply_transpose(&r)?;
    let grad = coeffs.x_coeff() * &core + coeffs.score_coeff() * model.score_vjp(x, i, &core);
    Ok((grad, r_norm, x_prime))
}

/// Spec-level matched-noise gradient: draws the step noise and the
/// noise-level-matched measurement internally.
pub fn matched_noise_gradient(
    model: &dyn ScoreModel,
    op: &ForwardOperator,
    x: &Array1<f64>,
    i: usize,
    y: &Array1<f64>,
    rng: &mut crate::rng::Rng,
) -> Result<Array1<f64>> {
    let sched = model.schedule();
    let coeffs = sched.reverse_coeffs(i)?;
    let score = model.score(x, i);
    let z = Array1::from_iter((0..x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let zm = Array1::from_iter((0..y.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let (a, b) = sched.level_coeffs(i - 1);
    let y_level = a * y + b * &zm;
    let (grad, _, _) = matched_noise_gradient_at(model, op, &coeffs, x, &score, i, &y_level, &z)?;
    Ok(grad)
}

/// Naive measurement gradient `grad_x ||W(y - H x)||^2 = -2 H^T W^T W (y - Hx)`,
/// with no denoising. Used to contrast against the manifold-constrained one.
pub fn naive_gradient(
    op: &ForwardOperator,
    weight: WeightKind,
    x: &Array1<f64>,
    y: &Array1<f64>,
) -> Result<(Array1<f64>, f64)> {
    let raw = y - &op.apply(x)?;
    let r_w = weight.apply(op, &raw)?;
    let r_norm = r_w.dot(&r_w).sqrt();
    let grad = -2.0 * &op.apply_transpose(&weight.apply_transpose(op, &r_w)?)?;
    Ok((grad, r_norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::InpaintingMask;
    use crate::schedule::Schedule;
    use crate::score::{orthonormalize, GaussianSubspaceScore, ScoreModel};
    use ndarray::Array2;
    use std::sync::Arc;

    fn setup(n: usize, l: usize) -> (GaussianSubspaceScore, ForwardOperator) {
        let sched = Arc::new(Schedule::vp(30, 1e-3, 0.2).unwrap());
        let mut rng = crate::rng::rng_from_seed(100);
        use rand_distr::StandardNormal;
        let raw = Array2::from_shape_fn((n, l), |_| rng.sample::<f64, _>(StandardNormal));
        let basis = orthonormalize(raw).unwrap();
        let model = GaussianSubspaceScore::new(sched, Array1::zeros(n), basis, 1.0).unwrap();
        let op = ForwardOperator::Inpainting(InpaintingMask::new(n, (0..n / 2).collect()).unwrap());
        (model, op)
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let (model, op) = setup(8, 2);
        let x = Array1::from_elem(8, 0.3);
        let xhat0 = model.tweedie_denoise(&x, 10);
        let y = op.apply(&xhat0).unwrap();
        let (grad, r) = mcg_gradient(&model, &op, WeightKind::Identity, &x, 10, &y).unwrap();
        assert!(r < 1e-12);
        assert!(grad.iter().all(|v| v.abs() < 1e-10));

        let (ngrad, nr) = naive_gradient(&op, WeightKind::Identity, &x, &op.apply(&x).unwrap()).unwrap();
        assert!(nr < 1e-12);
        assert!(ngrad.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mcg_gradient_matches_finite_differences() {
        let (model, op) = setup(8, 2);
        let mut rng = crate::rng::rng_from_seed(7);
        use rand_distr::StandardNormal;
        let y = Array1::from_iter((0..op.m()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        for i in [3usize, 15, 30] {
            let x = Array1::from_iter((0..8).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let (grad, _) = mcg_gradient(&model, &op, WeightKind::Identity, &x, i, &y).unwrap();
            let loss = |x: &Array1<f64>| {
                let xhat0 = model.tweedie_denoise(x, i);
                let r = &y - &op.apply(&xhat0).unwrap();
                r.dot(&r)
            };
            let h = 1e-5 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            let mut fd = Array1::zeros(8);
            for j in 0..8 {
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                fd[j] = (loss(&xp) - loss(&xm)) / (2.0 * h);
            }
            let rel = (&grad - &fd).mapv(|v| v * v).sum().sqrt()
                / fd.mapv(|v| v * v).sum().sqrt();
            assert!(rel < 1e-5, "i={i}: rel {rel}");
        }
    }

    #[test]
    fn mcg_gradient_is_tangent_for_subspace_oracle() {
        let (model, op) = setup(12, 3);
        let mut rng = crate::rng::rng_from_seed(8);
        use rand_distr::StandardNormal;
        let y = Array1::from_iter((0..op.m()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        for i in [1usize, 10, 20] {
            let x = Array1::from_iter((0..12).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let (grad, _) = mcg_gradient(&model, &op, WeightKind::Identity, &x, i, &y).unwrap();
            let normal = model.normal_component(&grad);
            let ratio = normal.dot(&normal).sqrt() / grad.dot(&grad).sqrt();
            assert!(ratio <= 1e-8, "i={i}: normal ratio {ratio}");
        }
    }

    #[test]
    fn stop_gradient_drops_the_jacobian_term() {
        let (model, op) = setup(8, 2);
        let mut rng = crate::rng::rng_from_seed(12);
        use rand_distr::StandardNormal;
        let y = Array1::from_iter((0..op.m()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = Array1::from_iter((0..8).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let i = 10;
        let score = model.score(&x, i);
        let (full, r1) = mcg_gradient_with_score(
            &model, &op, WeightKind::Identity, &x, &score, i, &y, false,
        )
        .unwrap();
        let (stopped, r2) = mcg_gradient_with_score(
            &model, &op, WeightKind::Identity, &x, &score, i, &y, true,
        )
        .unwrap();
        assert_eq!(r1, r2);
        assert!((&full - &stopped).mapv(|v| v * v).sum().sqrt() > 1e-6);
        // The stopped form is exactly -2 H^T W^T r / a.
        let a = model.schedule().a(i);
        let xhat0 = tweedie_from_score(&model, &x, &score, i);
        let expect = -2.0 * &op.apply_transpose(&(&y - &op.apply(&xhat0).unwrap())).unwrap() / a;
        assert!((&stopped - &expect).mapv(|v| v * v).sum().sqrt() < 1e-12);
    }

    #[test]
    fn matched_noise_gradient_matches_finite_differences() {
        let (model, op) = setup(6, 2);
        let sched = model.schedule().clone();
        let mut rng = crate::rng::rng_from_seed(9);
        use rand_distr::StandardNormal;
        let y = Array1::from_iter((0..op.m()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        for i in [2usize, 12, 30] {
            let coeffs = sched.reverse_coeffs(i).unwrap();
            let x = Array1::from_iter((0..6).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let z = Array1::from_iter((0..6).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let (al, bl) = sched.level_coeffs(i - 1);
            let zm = Array1::from_iter((0..op.m()).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let y_level = al * &y + bl * &zm;
            let score = model.score(&x, i);
            let (grad, _, _) =
                matched_noise_gradient_at(&model, &op, &coeffs, &x, &score, i, &y_level, &z)
                    .unwrap();
            let loss = |x: &Array1<f64>| {
                let s = model.score(x, i);
                let xp = coeffs.deterministic(x, &s) + coeffs.noise_scale() * &z;
                let r = &y_level - &op.apply(&xp).unwrap();
                r.dot(&r)
            };
            let h = 1e-5 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            let mut fd = Array1::zeros(6);
            for j in 0..6 {
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                fd[j] = (loss(&xp) - loss(&xm)) / (2.0 * h);
            }
            let rel = (&grad - &fd).mapv(|v| v * v).sum().sqrt()
                / fd.mapv(|v| v * v).sum().sqrt();
            assert!(rel < 1e-5, "i={i}: rel {rel}");
        }
    }
}
