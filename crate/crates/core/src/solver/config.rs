//! Sampler configuration and per-task defaults.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerFamily {
    /// DDPM-style ancestral sampling on a VP schedule.
    AncestralVp,
    /// Predictor-corrector sampling on a VE schedule.
    PredictorCorrectorVe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientVariant {
    /// No measurement gradient (projection-only or unconditional).
    None,
    /// Gradient of `||W(y - H xhat_0)||^2` through the Tweedie denoiser.
    McgTweedie,
    /// Ablation: gradient of `||y_{i-1} - H x'_{i-1}||^2` at matched noise
    /// level, without denoising.
    MatchedNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McgPlacement {
    /// Gradient + consistency after every predictor and corrector sub-step.
    AfterPredictorAndCorrector,
    /// Gradient + consistency once per corrector-predictor sweep.
    AfterSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub family: SamplerFamily,
    /// Reverse-diffusion steps; must equal the schedule length.
    pub nfe: usize,
    /// Gradient scale before residual normalization (`alpha'`).
    pub alpha_prime: f64,
    pub gradient_variant: GradientVariant,
    pub use_projection: bool,
    pub corrector_steps_per_iter: usize,
    pub corrector_snr: f64,
    pub mcg_placement: McgPlacement,
    /// Ablation switch: drop the score-Jacobian term of the gradient
    /// (never the default).
    pub stop_gradient: bool,
    pub seed: u64,
}

impl SamplerConfig {
    /// Inpainting defaults: ancestral VP, `N = 1000`, `alpha' = 1.0`,
    /// gradient + projection every step.
    pub fn inpainting_defaults(seed: u64) -> Self {
        SamplerConfig {
            family: SamplerFamily::AncestralVp,
            nfe: 1000,
            alpha_prime: 1.0,
            gradient_variant: GradientVariant::McgTweedie,
            use_projection: true,
            corrector_steps_per_iter: 0,
            corrector_snr: 0.16,
            mcg_placement: McgPlacement::AfterPredictorAndCorrector,
            stop_gradient: false,
            seed,
        }
    }

    /// Colorization defaults: PC on VE, `N = 2000`, `alpha' = 0.1`, one
    /// corrector step, gradient + projection after every sub-step.
    pub fn colorization_defaults(seed: u64) -> Self {
        SamplerConfig {
            family: SamplerFamily::PredictorCorrectorVe,
            nfe: 2000,
            alpha_prime: 0.1,
            gradient_variant: GradientVariant::McgTweedie,
            use_projection: true,
            corrector_steps_per_iter: 1,
            corrector_snr: 0.16,
            mcg_placement: McgPlacement::AfterPredictorAndCorrector,
            stop_gradient: false,
            seed,
        }
    }

    /// Sparse-view tomography defaults: PC on VE, `N = 2000`,
    /// `alpha' = 0.1`, gradient + consistency once per sweep.
    pub fn ct_defaults(seed: u64) -> Self {
        SamplerConfig {
            mcg_placement: McgPlacement::AfterSweep,
            ..SamplerConfig::colorization_defaults(seed)
        }
    }

    pub fn with_nfe(mut self, nfe: usize) -> Self {
        self.nfe = nfe;
        self
    }

    pub fn with_alpha_prime(mut self, alpha_prime: f64) -> Self {
        self.alpha_prime = alpha_prime;
        self
    }

    pub fn with_variant(mut self, variant: GradientVariant) -> Self {
        self.gradient_variant = variant;
        self
    }

    pub fn with_projection(mut self, on: bool) -> Self {
        self.use_projection = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}
