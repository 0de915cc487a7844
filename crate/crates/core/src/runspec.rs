//! The structured-text run specification consumed by `solve` and `ablate`.
//!
//! A spec is a TOML document; CLI flags mirror its fields and the `--spec`
//! file form is canonical. Unset sampler fields fall back to the task's
//! defaults; an unset schedule falls back to the family's standard one,
//! rebuilt at the configured NFE. The seed is mandatory: no configuration is
//! ever read from the environment.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{McgError, Result};
use crate::schedule::ScheduleSpec;
use crate::solver::{GradientVariant, McgPlacement, SamplerConfig, SamplerFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Inpaint,
    Colorize,
    Ct,
    CustomDense,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Inpaint => "inpaint",
            Task::Colorize => "colorize",
            Task::Ct => "ct",
            Task::CustomDense => "custom-dense",
        }
    }
}

/// Where the ground-truth signal comes from.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DataSpec {
    /// Phantom kind: `shepp-logan`, `ellipses`, `eight-gaussians-2d`,
    /// `subspace-patch`, `color-ellipses`.
    pub phantom: Option<String>,
    /// Image side (pixels) for image phantoms.
    pub size: Option<usize>,
    /// Ambient dimension for vector phantoms.
    pub n: Option<usize>,
    /// Manifold dimension for `subspace-patch`.
    pub l: Option<usize>,
    /// Tangent scale.
    pub tau: Option<f64>,
    /// Ground truth from a raw-float file instead of a phantom.
    pub truth: Option<PathBuf>,
}

/// Forward-operator parameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct OperatorSpec {
    /// Mask file (kept indices or `box x0 y0 w h`).
    pub mask: Option<PathBuf>,
    /// Inline box `[x0, y0, w, h]` hidden in every channel.
    pub hide_box: Option<[usize; 4]>,
    /// Inline contiguous hidden block `[start, len]` of a vector signal.
    pub hide_block: Option<[usize; 2]>,
    /// Inline kept indices.
    pub kept: Option<Vec<usize>>,
    /// Tomography view count.
    pub views: Option<usize>,
    /// Tomography detector count (defaults to the image side).
    pub detectors: Option<usize>,
    /// Dense operator matrix from a raw-float file (rows x cols x 1).
    pub matrix: Option<PathBuf>,
    /// Std of Gaussian measurement noise added to `y` (default 0: the
    /// noiseless setting).
    pub noise_sigma: Option<f64>,
}

/// Score-model source.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelSpec {
    /// `gaussian`, `mixture`, or `mlp`. Defaults per task.
    pub kind: Option<String>,
    /// Training points for `mixture` (raw-float, rows x dim x 1).
    pub dataset: Option<PathBuf>,
    /// Serialized model for `mlp` (or any kind saved earlier).
    pub weights: Option<PathBuf>,
    /// Tangent std for the `gaussian` oracle.
    pub tau: Option<f64>,
    /// Synthetic prior size for image tasks without a dataset file.
    pub prior_count: Option<usize>,
    /// Put the ground truth into the synthetic prior (defaults to false:
    /// held-out evaluation).
    pub prior_includes_truth: Option<bool>,
}

/// Optional sampler overrides on top of the task defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SamplerOverrides {
    pub family: Option<SamplerFamily>,
    pub nfe: Option<usize>,
    pub alpha_prime: Option<f64>,
    pub variant: Option<GradientVariant>,
    pub projection: Option<bool>,
    pub corrector_steps: Option<usize>,
    pub snr: Option<f64>,
    pub placement: Option<McgPlacement>,
    pub stop_gradient: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunSpec {
    pub task: Task,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub operator: OperatorSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub sampler: SamplerOverrides,
    /// Explicit schedule endpoints; rebuilt at the configured NFE.
    pub schedule: Option<ScheduleSpec>,
}

impl RunSpec {
    pub fn from_toml_str(text: &str) -> Result<RunSpec> {
        let spec: RunSpec =
            toml::from_str(text).map_err(|e| McgError::Parse(format!("run spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<RunSpec> {
        let text = std::fs::read_to_string(&path)?;
        let spec = RunSpec::from_toml_str(&text)?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run spec serializes")
    }

    /// All referenced input paths must exist at parse time.
    pub fn validate(&self) -> Result<()> {
        let paths = [
            self.data.truth.as_ref(),
            self.operator.mask.as_ref(),
            self.operator.matrix.as_ref(),
            self.model.dataset.as_ref(),
            self.model.weights.as_ref(),
        ];
        for p in paths.into_iter().flatten() {
            if !p.exists() {
                return Err(McgError::Parse(format!(
                    "referenced input does not exist: {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    /// Sampler configuration: task defaults overridden by the spec.
    pub fn sampler_config(&self) -> SamplerConfig {
        let mut config = match self.task {
            Task::Inpaint | Task::CustomDense => SamplerConfig::inpainting_defaults(self.seed),
            Task::Colorize => SamplerConfig::colorization_defaults(self.seed),
            Task::Ct => SamplerConfig::ct_defaults(self.seed),
        };
        let o = &self.sampler;
        if let Some(v) = o.family {
            config.family = v;
        }
        if let Some(v) = o.nfe {
            config.nfe = v;
        }
        if let Some(v) = o.alpha_prime {
            config.alpha_prime = v;
        }
        if let Some(v) = o.variant {
            config.gradient_variant = v;
        }
        if let Some(v) = o.projection {
            config.use_projection = v;
        }
        if let Some(v) = o.corrector_steps {
            config.corrector_steps_per_iter = v;
        }
        if let Some(v) = o.snr {
            config.corrector_snr = v;
        }
        if let Some(v) = o.placement {
            config.mcg_placement = v;
        }
        if let Some(v) = o.stop_gradient {
            config.stop_gradient = v;
        }
        config
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_spec_with_task_defaults() {
        let spec = RunSpec::from_toml_str(
            r#"
task = "inpaint"
seed = 7
out-dir = "results/r1"
"#,
        )
        .unwrap();
        let config = spec.sampler_config();
        assert_eq!(config.family, SamplerFamily::AncestralVp);
        assert_eq!(config.nfe, 1000);
        assert_eq!(config.alpha_prime, 1.0);
        assert_eq!(config.seed, 7);
    }

    #[test]
    fn overrides_apply_and_roundtrip() {
        let spec = RunSpec::from_toml_str(
            r#"
task = "ct"
seed = 3
out-dir = "out"

[data]
phantom = "shepp-logan"
size = 64

[operator]
views = 30

[sampler]
nfe = 400
alpha-prime = 0.2
variant = "none"
"#,
        )
        .unwrap();
        let config = spec.sampler_config();
        assert_eq!(config.nfe, 400);
        assert_eq!(config.alpha_prime, 0.2);
        assert_eq!(config.gradient_variant, GradientVariant::None);
        assert_eq!(config.mcg_placement, McgPlacement::AfterSweep);
        let back = RunSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(back.sampler_config(), config);
    }

    #[test]
    fn missing_input_paths_rejected() {
        let err = RunSpec::from_toml_str(
            r#"
task = "inpaint"
seed = 1
out-dir = "out"

[model]
weights = "/nonexistent/model.bin"
"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunSpec::from_toml_str(
            r#"
task = "inpaint"
seed = 1
out-dir = "out"

[sampler]
bogus = 4
"#
        )
        .is_err());
    }
}
