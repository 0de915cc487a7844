//! The conditional reverse-diffusion engine shared by both sampler families.
//!
//! One iteration at index `i` follows the ancestral pattern: cache the score,
//! take the unconditional sub-step, subtract the (residual-normalized)
//! measurement gradient computed from the cached score, then re-impose
//! measurement consistency with an offset drawn at the level of the new
//! iterate (level `i - 1` after a predictor, level `i` after a corrector;
//! level 0 means the exact measurement).
//!
//! Random draws are ordered so that disabled features consume nothing:
//! `alpha' = 0` reproduces the projection-only trajectory bitwise, and
//! additionally disabling projection reproduces the unconditional sampler.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{McgError, Result};
use crate::operators::{ForwardOperator, WeightKind};
use crate::rng::Rng;
use crate::score::ScoreModel;

use super::config::{GradientVariant, McgPlacement, SamplerConfig, SamplerFamily};
use super::gradient::{
    matched_noise_gradient_at, mcg_gradient_with_score, tweedie_from_score, RESIDUAL_GUARD,
};
use super::report::StepDiagnostics;

/// States larger than this in any coordinate count as divergence even before
/// they overflow to non-finite values.
pub const DIVERGENCE_GUARD: f64 = 1e12;

pub(super) struct Engine<'a> {
    pub config: &'a SamplerConfig,
    pub model: &'a dyn ScoreModel,
    pub op: &'a ForwardOperator,
    pub weight: WeightKind,
    pub y: &'a Array1<f64>,
    pub tangent_basis: Option<&'a Array2<f64>>,
    pub rng: &'a mut Rng,
    pub steps: Vec<StepDiagnostics>,
    pub nfe_used: usize,
}

impl<'a> Engine<'a> {
    fn draw(&mut self, len: usize) -> Array1<f64> {
        Array1::from_iter((0..len).map(|_| self.rng.sample::<f64, _>(StandardNormal)))
    }

    fn gradient_enabled(&self) -> bool {
        self.config.alpha_prime > 0.0
            && self.config.gradient_variant != GradientVariant::None
    }

    fn check_state(&self, x: &Array1<f64>, i: usize) -> Result<()> {
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_GUARD) {
            return Err(McgError::SamplerDivergence { step: i });
        }
        Ok(())
    }

    fn tangency_of(&self, grad: &Array1<f64>) -> Option<f64> {
        let basis = self.tangent_basis?;
        let norm = grad.dot(grad).sqrt();
        if norm == 0.0 {
            return Some(0.0);
        }
        let tangent = basis.dot(&basis.t().dot(grad));
        let normal = grad - &tangent;
        Some(normal.dot(&normal).sqrt() / norm)
    }

    /// Measurement-consistency projection with the offset drawn at `level`.
    fn project(&mut self, x: Array1<f64>, level: usize) -> Result<Array1<f64>> {
        let z = self.draw(self.op.m());
        let (a, b) = self.model.schedule().level_coeffs(level);
        let y_off = a * self.y + b * &z;
        self.op.consistency_step(&x, &y_off)
    }

    /// One ancestral/predictor iteration at index `i`: score, unconditional
    /// step, gradient, consistency at level `i - 1`. Records diagnostics.
    fn predictor_step(&mut self, x: Array1<f64>, i: usize) -> Result<Array1<f64>> {
        let sched = self.model.schedule();
        let score = self.model.score(&x, i);
        self.nfe_used += 1;
        let coeffs = sched.reverse_coeffs(i)?;
        let z = self.draw(x.len());
        let mut x_next = coeffs.deterministic(&x, &score) + coeffs.noise_scale() * &z;

        // Diagnostics from the cached score.
        let xhat0 = tweedie_from_score(self.model, &x, &score, i);
        let raw = self.y - &self.op.apply(&xhat0)?;
        let weighted = self.weight.apply(self.op, &raw)?;
        let weighted_residual = weighted.dot(&weighted).sqrt();
        let fixed_point_residual = (&x - &xhat0).mapv(|v| v * v).sum().sqrt();
        let mut tangency_ratio = None;

        if self.gradient_enabled() {
            match self.config.gradient_variant {
                GradientVariant::McgTweedie => {
                    if weighted_residual >= RESIDUAL_GUARD {
                        let (grad, r_norm) = mcg_gradient_with_score(
                            self.model,
                            self.op,
                            self.weight,
                            &x,
                            &score,
                            i,
                            self.y,
                            self.config.stop_gradient,
                        )?;
                        tangency_ratio = self.tangency_of(&grad);
                        x_next -= &((self.config.alpha_prime / r_norm) * &grad);
                    }
                }
                GradientVariant::MatchedNoise => {
                    let zm = self.draw(self.op.m());
                    let (a, b) = sched.level_coeffs(i - 1);
                    let y_level = a * self.y + b * &zm;
                    let (grad, r_norm, _) = matched_noise_gradient_at(
                        self.model, self.op, &coeffs, &x, &score, i, &y_level, &z,
                    )?;
                    if r_norm >= RESIDUAL_GUARD {
                        tangency_ratio = self.tangency_of(&grad);
                        x_next -= &((self.config.alpha_prime / r_norm) * &grad);
                    }
                }
                GradientVariant::None => unreachable!(),
            }
        }

        if self.config.use_projection {
            x_next = self.project(x_next, i - 1)?;
        }
        self.steps.push(StepDiagnostics {
            i,
            weighted_residual,
            fixed_point_residual,
            tangency_ratio,
        });
        self.check_state(&x_next, i)?;
        Ok(x_next)
    }

    /// One annealed Langevin corrector update at level `i`, with the
    /// gradient and consistency applied when the placement asks for them.
    /// The matched-noise ablation is defined through the predictor
    /// transition only, so corrector sub-steps never take it.
    fn corrector_step(&mut self, x: Array1<f64>, i: usize) -> Result<Array1<f64>> {
        let z = self.draw(x.len());
        let score = self.model.score(&x, i);
        self.nfe_used += 1;
        let score_norm = score.dot(&score).sqrt();
        let snr = self.config.corrector_snr;
        let mut x_next = if snr == 0.0 || score_norm == 0.0 {
            x.clone()
        } else {
            let eta = 2.0 * (snr * z.dot(&z).sqrt() / score_norm).powi(2);
            &x + &(eta * &score) + (2.0 * eta).sqrt() * &z
        };

        if self.config.mcg_placement == McgPlacement::AfterPredictorAndCorrector {
            if self.gradient_enabled()
                && self.config.gradient_variant == GradientVariant::McgTweedie
            {
                let (grad, r_norm) = mcg_gradient_with_score(
                    self.model,
                    self.op,
                    self.weight,
                    &x,
                    &score,
                    i,
                    self.y,
                    self.config.stop_gradient,
                )?;
                if r_norm >= RESIDUAL_GUARD {
                    x_next -= &((self.config.alpha_prime / r_norm) * &grad);
                }
            }
            // Consistency after the corrector is a placement property, not a
            // gradient one: the projection-only baseline re-imposes the
            // measurement after every sub-step too.
            if self.config.use_projection {
                x_next = self.project(x_next, i)?;
            }
        }
        self.check_state(&x_next, i)?;
        Ok(x_next)
    }

    pub fn run(&mut self) -> Result<Array1<f64>> {
        let n = self.model.dim();
        let sched = self.model.schedule();
        let big_n = sched.n();
        let mut x = match self.config.family {
            SamplerFamily::AncestralVp => self.draw(n),
            SamplerFamily::PredictorCorrectorVe => sched.b(big_n) * self.draw(n),
        };
        for i in (1..=big_n).rev() {
            if self.config.family == SamplerFamily::PredictorCorrectorVe {
                for _ in 0..self.config.corrector_steps_per_iter {
                    x = self.corrector_step(x, i)?;
                }
            }
            x = self.predictor_step(x, i)?;
        }
        Ok(x)
    }
}

/// One full conditioned reverse iteration at index `i`: cache the score,
/// take the unconditional step, subtract the configured measurement
/// gradient, and re-impose consistency at level `i - 1`. This is exactly
/// the iteration `solve_inverse` runs; exposed for custom sampling loops.
#[allow(clippy::too_many_arguments)]
pub fn mcg_step(
    config: &SamplerConfig,
    model: &dyn ScoreModel,
    op: &ForwardOperator,
    weight: WeightKind,
    x_i: &Array1<f64>,
    i: usize,
    y: &Array1<f64>,
    rng: &mut Rng,
) -> Result<Array1<f64>> {
    let mut engine = Engine {
        config,
        model,
        op,
        weight,
        y,
        tangent_basis: None,
        rng,
        steps: Vec::with_capacity(1),
        nfe_used: 0,
    };
    engine.predictor_step(x_i.clone(), i)
}

/// One unconditional reverse step `f(x_i, s) + g z` with the step noise drawn
/// from `rng`.
pub fn reverse_step_unconditional(
    model: &dyn ScoreModel,
    x: &Array1<f64>,
    i: usize,
    rng: &mut Rng,
) -> Result<Array1<f64>> {
    let coeffs = model.schedule().reverse_coeffs(i)?;
    let score = model.score(x, i);
    let z = Array1::from_iter((0..x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    Ok(coeffs.deterministic(x, &score) + coeffs.noise_scale() * &z)
}

/// One annealed Langevin corrector step
/// `x + eta s + sqrt(2 eta) z` with `eta = 2 (snr ||z|| / ||s||)^2`.
/// Zero `snr` or a zero score leaves `x` unchanged (the noise draw is still
/// consumed so the stream stays aligned).
pub fn pc_corrector_step(
    model: &dyn ScoreModel,
    x: &Array1<f64>,
    i: usize,
    snr: f64,
    rng: &mut Rng,
) -> Result<Array1<f64>> {
    let z = Array1::from_iter((0..x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let score = model.score(x, i);
    let score_norm = score.dot(&score).sqrt();
    if snr == 0.0 || score_norm == 0.0 {
        return Ok(x.clone());
    }
    let eta = 2.0 * (snr * z.dot(&z).sqrt() / score_norm).powi(2);
    Ok(x + &(eta * &score) + (2.0 * eta).sqrt() * &z)
}

/// Full unconditional reverse run of either family; the reference point for
/// the sampler reduction identities.
pub fn sample_unconditional(
    model: &dyn ScoreModel,
    family: SamplerFamily,
    corrector_steps_per_iter: usize,
    corrector_snr: f64,
    seed: u64,
) -> Result<Array1<f64>> {
    let sched = model.schedule();
    let n = model.dim();
    let mut rng = crate::rng::rng_for_stream(seed, super::SOLVE_STREAM);
    let draw = |rng: &mut Rng, len: usize| {
        Array1::from_iter((0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
    };
    let mut x = match family {
        SamplerFamily::AncestralVp => draw(&mut rng, n),
        SamplerFamily::PredictorCorrectorVe => sched.b(sched.n()) * draw(&mut rng, n),
    };
    for i in (1..=sched.n()).rev() {
        if family == SamplerFamily::PredictorCorrectorVe {
            for _ in 0..corrector_steps_per_iter {
                x = pc_corrector_step(model, &x, i, corrector_snr, &mut rng)?;
            }
        }
        x = reverse_step_unconditional(model, &x, i, &mut rng)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(McgError::SamplerDivergence { step: i });
        }
    }
    Ok(x)
}
