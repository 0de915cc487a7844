//! Reverse-diffusion solvers for linear inverse problems: unconditional,
//! projection-only, and manifold-constrained gradient (MCG) variants, for
//! the ancestral VP and predictor-corrector VE families.

mod config;
mod engine;
mod gradient;
mod report;

pub use config::{GradientVariant, McgPlacement, SamplerConfig, SamplerFamily};
pub use engine::{
    mcg_step, pc_corrector_step, reverse_step_unconditional, sample_unconditional,
    DIVERGENCE_GUARD,
};
pub use gradient::{
    matched_noise_gradient, matched_noise_gradient_at, mcg_gradient, mcg_gradient_with_score,
    naive_gradient, tweedie_from_score, RESIDUAL_GUARD,
};
pub use report::{ReconstructionReport, SolveFailure, StepDiagnostics};

use ndarray::{Array1, Array2};

use crate::error::McgError;
use crate::metrics;
use crate::operators::{ForwardOperator, WeightKind};
use crate::schedule::SdeKind;
use crate::score::ScoreModel;

/// RNG sub-stream used by a solve.
pub(crate) const SOLVE_STREAM: u64 = 0x50;

/// Everything a solve needs besides the sampler configuration.
pub struct SolveInputs<'a> {
    pub op: &'a ForwardOperator,
    pub weight: WeightKind,
    pub y: &'a Array1<f64>,
    /// Ground truth for quality metrics, when known.
    pub x_true: Option<&'a Array1<f64>>,
    /// Planar `(height, width, channels)` of the signal, for SSIM.
    pub image_shape: Option<(usize, usize, usize)>,
    /// Tangent basis of the data manifold, for tangency diagnostics.
    pub tangent_basis: Option<&'a Array2<f64>>,
}

impl<'a> SolveInputs<'a> {
    pub fn new(op: &'a ForwardOperator, weight: WeightKind, y: &'a Array1<f64>) -> Self {
        SolveInputs {
            op,
            weight,
            y,
            x_true: None,
            image_shape: None,
            tangent_basis: None,
        }
    }

    pub fn with_truth(mut self, x_true: &'a Array1<f64>) -> Self {
        self.x_true = Some(x_true);
        self
    }

    pub fn with_image_shape(mut self, shape: (usize, usize, usize)) -> Self {
        self.image_shape = Some(shape);
        self
    }

    pub fn with_tangent_basis(mut self, basis: &'a Array2<f64>) -> Self {
        self.tangent_basis = Some(basis);
        self
    }
}

fn validate(
    config: &SamplerConfig,
    model: &dyn ScoreModel,
    inputs: &SolveInputs,
) -> Result<(), McgError> {
    let sched = model.schedule();
    match (config.family, sched.kind()) {
        (SamplerFamily::AncestralVp, SdeKind::Vp)
        | (SamplerFamily::PredictorCorrectorVe, SdeKind::Ve) => {}
        _ => {
            return Err(McgError::parameter(
                "sampler family does not match the model's schedule kind",
            ))
        }
    }
    if sched.n() != config.nfe {
        return Err(McgError::parameter(format!(
            "config nfe {} must equal the schedule length {}; rebuild the schedule for NFE sweeps",
            config.nfe,
            sched.n()
        )));
    }
    if inputs.op.n() != model.dim() {
        return Err(McgError::DimensionMismatch {
            expected: model.dim(),
            got: inputs.op.n(),
            context: "operator signal dimension",
        });
    }
    if inputs.y.len() != inputs.op.m() {
        return Err(McgError::DimensionMismatch {
            expected: inputs.op.m(),
            got: inputs.y.len(),
            context: "measurement dimension",
        });
    }
    if config.alpha_prime < 0.0 {
        return Err(McgError::parameter("alpha' must be nonnegative"));
    }
    Ok(())
}

/// Run the configured sampler from pure noise down to a reconstruction,
/// recording per-step diagnostics and final metrics.
pub fn solve_inverse(
    config: &SamplerConfig,
    model: &dyn ScoreModel,
    inputs: &SolveInputs,
) -> Result<ReconstructionReport, SolveFailure> {
    if let Err(error) = validate(config, model, inputs) {
        return Err(SolveFailure { error, steps: Vec::new() });
    }
    let start = std::time::Instant::now();
    let mut rng = crate::rng::rng_for_stream(config.seed, SOLVE_STREAM);
    let mut engine = engine::Engine {
        config,
        model,
        op: inputs.op,
        weight: inputs.weight,
        y: inputs.y,
        tangent_basis: inputs.tangent_basis,
        rng: &mut rng,
        steps: Vec::with_capacity(config.nfe),
        nfe_used: 0,
    };
    let x0_hat = match engine.run() {
        Ok(x) => x,
        Err(error) => {
            return Err(SolveFailure {
                error,
                steps: engine.steps,
            })
        }
    };
    let h_xhat = inputs.op.apply(&x0_hat).map_err(|error| SolveFailure {
        error,
        steps: engine.steps.clone(),
    })?;
    let mse_mc = metrics::mse_mc(inputs.y, &h_xhat);
    let (mse, psnr_db, ssim) = match inputs.x_true {
        Some(t) => {
            let m = metrics::mse(&x0_hat, t);
            let s = inputs
                .image_shape
                .map(|(h, w, c)| metrics::ssim(&x0_hat, t, h, w, c));
            (Some(m), Some(metrics::psnr_db(m)), s)
        }
        None => (None, None, None),
    };
    Ok(ReconstructionReport {
        x0_hat,
        steps: engine.steps,
        mse,
        psnr_db,
        ssim,
        mse_mc,
        nfe_used: engine.nfe_used,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{DenseOperator, InpaintingMask};
    use crate::schedule::Schedule;
    use crate::score::{orthonormalize, GaussianSubspaceScore};
    use ndarray::Array2;
    use rand::Rng as _;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn subspace_model(n: usize, l: usize, nfe: usize) -> GaussianSubspaceScore {
        let sched = Arc::new(Schedule::vp(nfe, 1e-3, 0.2).unwrap());
        let mut rng = crate::rng::rng_from_seed(500);
        let raw = Array2::from_shape_fn((n, l), |_| rng.sample::<f64, _>(StandardNormal));
        let basis = orthonormalize(raw).unwrap();
        GaussianSubspaceScore::new(sched, Array1::zeros(n), basis, 1.0).unwrap()
    }

    #[test]
    fn full_observation_recovers_exactly() {
        // Keep-everything mask with projection: the final consistency step
        // at level zero pins the output to y itself, bitwise.
        let n = 6;
        let model = subspace_model(n, 2, 40);
        let x_true = model.basis().dot(&ndarray::array![0.4, -1.2]);
        let op = ForwardOperator::Inpainting(InpaintingMask::identity(n).unwrap());
        let y = op.apply(&x_true).unwrap();
        let config = SamplerConfig::inpainting_defaults(3).with_nfe(40);
        let report = solve_inverse(
            &config,
            &model,
            &SolveInputs::new(&op, WeightKind::Identity, &y).with_truth(&x_true),
        )
        .unwrap();
        assert_eq!(report.x0_hat, x_true);
        assert_eq!(report.mse_mc, 0.0);
        assert!(report.psnr_db.unwrap().is_infinite());

        // Identity as a dense matrix goes through the gram solve, which is
        // exact only to rounding.
        let op = ForwardOperator::Dense(DenseOperator::identity(n).unwrap());
        let report = solve_inverse(
            &config,
            &model,
            &SolveInputs::new(&op, WeightKind::Identity, &y).with_truth(&x_true),
        )
        .unwrap();
        assert!(report.mse.unwrap() < 1e-24);
        assert!(report.mse_mc < 1e-24);
    }

    #[test]
    fn reduction_alpha_zero_equals_projection_only() {
        let n = 8;
        let model = subspace_model(n, 2, 30);
        let op =
            ForwardOperator::Inpainting(InpaintingMask::new(n, vec![0, 1, 2, 5]).unwrap());
        let x_true = model.basis().dot(&ndarray::array![1.0, 0.5]);
        let y = op.apply(&x_true).unwrap();
        let base = SamplerConfig::inpainting_defaults(42).with_nfe(30);

        let mcg_zero = solve_inverse(
            &base.with_alpha_prime(0.0),
            &model,
            &SolveInputs::new(&op, WeightKind::Identity, &y),
        )
        .unwrap();
        let proj_only = solve_inverse(
            &base.with_variant(GradientVariant::None),
            &model,
            &SolveInputs::new(&op, WeightKind::Identity, &y),
        )
        .unwrap();
        assert_eq!(mcg_zero.x0_hat, proj_only.x0_hat);

        let matched_zero = solve_inverse(
            &base.with_variant(GradientVariant::MatchedNoise).with_alpha_prime(0.0),
            &model,
            &SolveInputs::new(&op, WeightKind::Identity, &y),
        )
        .unwrap();
        assert_eq!(matched_zero.x0_hat, proj_only.x0_hat);
    }

    #[test]
    fn reduction_no_projection_equals_unconditional() {
        let n = 8;
        let model = subspace_model(n, 2, 25);
        let op = ForwardOperator::Inpainting(InpaintingMask::new(n, vec![0, 3]).unwrap());
        let y = Array1::zeros(2);
        let config = SamplerConfig::inpainting_defaults(7)
            .with_nfe(25)
            .with_alpha_prime(0.0)
            .with_projection(false);
        let conditioned = solve_inverse(
            &config,
            &model,
            &SolveInputs::new(&op, WeightKind::Identity, &y),
        )
        .unwrap();
        let unconditional =
            sample_unconditional(&model, SamplerFamily::AncestralVp, 0, 0.16, 7).unwrap();
        assert_eq!(conditioned.x0_hat, unconditional);
    }

    #[test]
    fn reduction_holds_for_pc_family_too() {
        let n = 6;
        let sched = Arc::new(Schedule::ve(20, 0.05, 10.0).unwrap());
        let mut rng = crate::rng::rng_from_seed(501);
        let raw = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let basis = orthonormalize(raw).unwrap();
        let model = GaussianSubspaceScore::new(sched, Array1::zeros(n), basis, 1.0).unwrap();
        let op = ForwardOperator::Inpainting(InpaintingMask::new(n, vec![1, 4]).unwrap());
        let y = Array1::zeros(2);
        let config = SamplerConfig {
            family: SamplerFamily::PredictorCorrectorVe,
            nfe: 20,
            alpha_prime: 0.0,
            gradient_variant: GradientVariant::McgTweedie,
            use_projection: false,
            corrector_steps_per_iter: 2,
            corrector_snr: 0.16,
            mcg_placement: McgPlacement::AfterPredictorAndCorrector,
            stop_gradient: false,
            seed: 11,
        };
        let conditioned = solve_inverse(
            &config,
            &model,
            &SolveInputs::new(&op, WeightKind::Identity, &y),
        )
        .unwrap();
        let unconditional =
            sample_unconditional(&model, SamplerFamily::PredictorCorrectorVe, 2, 0.16, 11)
                .unwrap();
        assert_eq!(conditioned.x0_hat, unconditional);
    }

    #[test]
    fn determinism_same_seed_same_report() {
        let n = 8;
        let model = subspace_model(n, 2, 30);
        let op = ForwardOperator::Inpainting(InpaintingMask::new(n, vec![0, 1, 6]).unwrap());
        let x_true = model.basis().dot(&ndarray::array![0.3, -0.7]);
        let y = op.apply(&x_true).unwrap();
        let config = SamplerConfig::inpainting_defaults(99).with_nfe(30);
        let inputs = SolveInputs::new(&op, WeightKind::Identity, &y).with_truth(&x_true);
        let a = solve_inverse(&config, &model, &inputs).unwrap();
        let b = solve_inverse(&config, &model, &inputs).unwrap();
        assert_eq!(a.x0_hat, b.x0_hat);
        assert_eq!(a.mse, b.mse);
        assert_eq!(a.nfe_used, b.nfe_used);
    }

    #[test]
    fn projection_keeps_measurement_consistency() {
        // The toy-scale gradient weight: the residual-normalized step has
        // magnitude ~2 alpha' regardless of dimension, so alpha' is scaled
        // down from the image-sized default.
        let n = 16;
        let sched = Arc::new(Schedule::vp(150, 5e-4, 0.1).unwrap());
        let mut rng = crate::rng::rng_from_seed(500);
        let raw = Array2::from_shape_fn((n, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let basis = orthonormalize(raw).unwrap();
        let model = GaussianSubspaceScore::new(sched, Array1::zeros(n), basis, 1.0).unwrap();
        let op = ForwardOperator::Inpainting(InpaintingMask::hide_block(n, 4, 8).unwrap());
        let x_true = model.basis().dot(&ndarray::array![0.5, 0.5, -0.5]);
        let y = op.apply(&x_true).unwrap();
        let config = SamplerConfig::inpainting_defaults(5)
            .with_nfe(150)
            .with_alpha_prime(0.1);
        let report = solve_inverse(
            &config,
            &model,
            &SolveInputs::new(&op, WeightKind::Identity, &y).with_truth(&x_true),
        )
        .unwrap();
        assert!(report.mse_mc <= 1e-10, "mse_mc {}", report.mse_mc);
        // MCG + projection on an exactly identifiable instance recovers well.
        assert!(report.mse.unwrap() < 1e-2, "mse {}", report.mse.unwrap());
    }

    #[test]
    fn mismatched_family_and_schedule_rejected() {
        let model = subspace_model(4, 1, 10);
        let op = ForwardOperator::Dense(DenseOperator::identity(4).unwrap());
        let y = Array1::zeros(4);
        let config = SamplerConfig {
            family: SamplerFamily::PredictorCorrectorVe,
            ..SamplerConfig::inpainting_defaults(1).with_nfe(10)
        };
        let err = solve_inverse(
            &config,
            &model,
            &SolveInputs::new(&op, WeightKind::Identity, &y),
        );
        assert!(err.is_err());
        let config = SamplerConfig::inpainting_defaults(1).with_nfe(12);
        assert!(solve_inverse(
            &config,
            &model,
            &SolveInputs::new(&op, WeightKind::Identity, &y)
        )
        .is_err());
    }

    #[test]
    fn manual_step_loop_reproduces_solve_inverse() {
        let n = 10;
        let nfe = 40;
        let model = subspace_model(n, 2, nfe);
        let op = ForwardOperator::Inpainting(InpaintingMask::hide_block(n, 2, 5).unwrap());
        let x_true = model.basis().dot(&ndarray::array![0.9, -0.4]);
        let y = op.apply(&x_true).unwrap();
        let config = SamplerConfig::inpainting_defaults(17)
            .with_nfe(nfe)
            .with_alpha_prime(0.1);
        let report = solve_inverse(
            &config,
            &model,
            &SolveInputs::new(&op, WeightKind::Identity, &y),
        )
        .unwrap();

        // The same chain, driven one step at a time.
        let mut rng = crate::rng::rng_for_stream(config.seed, SOLVE_STREAM);
        use rand_distr::StandardNormal;
        let mut x = Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        for i in (1..=nfe).rev() {
            x = mcg_step(&config, &model, &op, WeightKind::Identity, &x, i, &y, &mut rng)
                .unwrap();
        }
        assert_eq!(x, report.x0_hat);
    }

    #[test]
    fn unconditional_run_lands_on_the_subspace_with_prior_moments() {
        // Full unconditional VE runs from pure noise: the final samples'
        // normal-component energy is under 1% of the total, and the
        // tangent-coordinate covariance matches tau^2 I within 20%.
        let n = 8;
        let l = 2;
        let tau = 1.0;
        let sched = Arc::new(Schedule::ve(600, 0.01, 4.0).unwrap());
        let mut rng = crate::rng::rng_from_seed(600);
        let raw = Array2::from_shape_fn((n, l), |_| rng.sample::<f64, _>(StandardNormal));
        let basis = orthonormalize(raw).unwrap();
        let model =
            GaussianSubspaceScore::new(sched, Array1::zeros(n), basis.clone(), tau * tau).unwrap();
        let runs = 500;
        let mut normal_energy = 0.0;
        let mut total_energy = 0.0;
        let mut cov = Array2::<f64>::zeros((l, l));
        for c in 0..runs {
            let x = sample_unconditional(
                &model,
                SamplerFamily::PredictorCorrectorVe,
                0,
                0.16,
                crate::rng::split(601, c),
            )
            .unwrap();
            let coords = basis.t().dot(&x);
            let tangent = basis.dot(&coords);
            let normal = &x - &tangent;
            normal_energy += normal.dot(&normal);
            total_energy += x.dot(&x);
            for a in 0..l {
                for b in 0..l {
                    cov[(a, b)] += coords[a] * coords[b] / runs as f64;
                }
            }
        }
        assert!(
            normal_energy / total_energy <= 0.01,
            "normal energy fraction {}",
            normal_energy / total_energy
        );
        for a in 0..l {
            for b in 0..l {
                let want = if a == b { tau * tau } else { 0.0 };
                assert!(
                    (cov[(a, b)] - want).abs() <= 0.2 * tau * tau,
                    "tangent covariance [{a},{b}] = {} vs {want}",
                    cov[(a, b)]
                );
            }
        }
    }

    #[test]
    fn corrector_zero_snr_is_identity_and_consumes_noise() {
        let model = subspace_model(4, 2, 10);
        let x = ndarray::array![0.3, -0.2, 0.5, 0.0];
        let mut rng = crate::rng::rng_from_seed(1);
        let out = pc_corrector_step(&model, &x, 5, 0.0, &mut rng).unwrap();
        assert_eq!(out, x);
        // The draw happened: the stream moved past 4 normals.
        let mut fresh = crate::rng::rng_from_seed(1);
        let _burn: Vec<f64> =
            (0..4).map(|_| rng_sample(&mut fresh)).collect();
        assert_eq!(
            rng_sample(&mut rng),
            rng_sample(&mut fresh),
            "zero-snr step must still consume its noise draw"
        );
    }

    fn rng_sample(rng: &mut crate::rng::Rng) -> f64 {
        use rand::Rng as _;
        rng.sample(rand_distr::StandardNormal)
    }

    #[test]
    fn corrector_contracts_toward_the_mode() {
        // Far-initialized chains move toward a_i * mean in expectation.
        let n = 8;
        let sched = Arc::new(Schedule::ve(5, 0.05, 2.0).unwrap());
        let mean = Array1::from_elem(n, 1.5);
        let model =
            GaussianSubspaceScore::new(sched.clone(), mean.clone(), Array2::eye(n), 1.0).unwrap();
        let i = 3;
        let target = sched.a(i) * &mean;
        let mut before_sum = 0.0;
        let mut after_sum = 0.0;
        for c in 0..100u64 {
            let mut rng = crate::rng::rng_for_stream(77, c);
            let mut x = Array1::from_iter(
                (0..n).map(|_| 6.0 + rng_sample(&mut rng)),
            );
            let d0 = (&x - &target).mapv(|v| v * v).sum().sqrt();
            for _ in 0..20 {
                x = pc_corrector_step(&model, &x, i, 0.16, &mut rng).unwrap();
            }
            let d1 = (&x - &target).mapv(|v| v * v).sum().sqrt();
            before_sum += d0;
            after_sum += d1;
        }
        assert!(
            after_sum < before_sum,
            "corrector must contract toward the mode: {after_sum} vs {before_sum}"
        );
    }

    #[test]
    fn corrector_preserves_stationary_variance() {
        // Starting from exact samples of p_i, ten corrector steps keep the
        // per-coordinate variance within 10% of a^2 tau^2 + b^2 (checked in
        // the tangent direction of a full-rank Gaussian oracle). The snr is
        // mid-range: the step rule's score-norm division makes large snr
        // inflate the marginal at desk-scale dimensions.
        let n = 16;
        let sched = Arc::new(Schedule::ve(5, 0.05, 2.0).unwrap());
        let tau2 = 0.49;
        let mean = Array1::from_elem(n, 0.4);
        let model =
            GaussianSubspaceScore::new(sched.clone(), mean.clone(), Array2::eye(n), tau2).unwrap();
        let i = 4;
        let v_target = sched.a(i) * sched.a(i) * tau2 + sched.b(i) * sched.b(i);
        let chains = 2000;
        let mut acc2 = 0.0;
        for c in 0..chains {
            let mut rng = crate::rng::rng_for_stream(78, c);
            let mut x = sched.a(i) * &mean
                + v_target.sqrt() * &Array1::from_iter((0..n).map(|_| rng_sample(&mut rng)));
            for _ in 0..10 {
                x = pc_corrector_step(&model, &x, i, 0.05, &mut rng).unwrap();
            }
            let d = x[0] - sched.a(i) * mean[0];
            acc2 += d * d;
        }
        let var = acc2 / chains as f64;
        assert!(
            (var - v_target).abs() < 0.1 * v_target,
            "variance {var:.4} vs target {v_target:.4}"
        );
    }

    #[test]
    fn divergence_is_reported_with_step_index() {
        // An absurd alpha' blows the state up; the failure carries the step
        // index and the diagnostics collected so far.
        let n = 8;
        let model = subspace_model(n, 2, 30);
        let op = ForwardOperator::Inpainting(InpaintingMask::new(n, vec![0, 1]).unwrap());
        let x_true = model.basis().dot(&ndarray::array![1.0, 1.0]);
        let y = op.apply(&x_true).unwrap();
        let config = SamplerConfig::inpainting_defaults(13)
            .with_nfe(30)
            .with_alpha_prime(1e30)
            .with_projection(false);
        match solve_inverse(
            &config,
            &model,
            &SolveInputs::new(&op, WeightKind::Identity, &y),
        ) {
            Err(SolveFailure { error, steps }) => {
                assert!(matches!(error, McgError::SamplerDivergence { .. }));
                assert!(!steps.is_empty());
            }
            Ok(r) => panic!(
                "expected divergence, got mse_mc {} after {} steps",
                r.mse_mc,
                r.steps.len()
            ),
        }
    }
}
