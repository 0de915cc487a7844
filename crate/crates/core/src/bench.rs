//! Benchmark front end: instance assembly from a run spec, solve execution
//! with artifact emission, ablation sweeps, and the geometry verification
//! battery. This is the layer the `mcg` CLI calls into.
//!
//! Artifact determinism: for a fixed spec and input files every output byte
//! is reproducible, except the wall-clock `seconds` column of metric rows.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{McgError, Result};
use crate::geometry::{
    check_concentration, check_projector, check_tangency, normal_direction_operator,
    GradientMutation, ManifoldSpec, NAIVE_RATIO_FLOOR, PROJECTOR_TOL, TANGENCY_TOL,
};
use crate::io::{self, CsvTable, RawArray};
use crate::operators::{
    ColorCoupling, DenseOperator, ForwardOperator, InpaintingMask, RadonTransform, WeightKind,
};
use crate::phantom;
use crate::rng;
use crate::runspec::{RunSpec, Task};
use crate::schedule::{ve_sigma_max_from_data, Schedule, ScheduleSpec};
use crate::score::{AnyScoreModel, EmpiricalMixtureScore, GaussianSubspaceScore};
use crate::solver::{
    solve_inverse, GradientVariant, ReconstructionReport, SamplerConfig,
    SolveInputs,
};

const METRICS_SCHEMA: &str = "mcg-metrics v1";
const METRICS_HEADER: &str =
    "run_id,task,variant,nfe,alpha_prime,mse,psnr_db,ssim,mse_mc,tangency_ratio,seconds,status";
const STEPS_SCHEMA: &str = "mcg-steps v1";
const STEPS_HEADER: &str = "i,weighted_residual,fixed_point_residual,tangency_ratio";

/// One metrics-table row; append-only CSV.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub run_id: String,
    pub task: String,
    pub variant: String,
    pub nfe: usize,
    pub alpha_prime: f64,
    pub mse: Option<f64>,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub mse_mc: Option<f64>,
    pub tangency_ratio: Option<f64>,
    pub seconds: f64,
    pub status: String,
}

impl MetricsRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.task,
            self.variant,
            self.nfe,
            self.alpha_prime,
            io::csv_float(self.mse),
            io::csv_float(self.psnr_db),
            io::csv_float(self.ssim),
            io::csv_float(self.mse_mc),
            io::csv_float(self.tangency_ratio),
            io::csv_float(Some(self.seconds)),
            self.status,
        )
    }
}

/// Human-readable variant label for reports and tables.
pub fn variant_label(config: &SamplerConfig) -> String {
    let grad = match config.gradient_variant {
        GradientVariant::None => "none",
        GradientVariant::McgTweedie => "mcg",
        GradientVariant::MatchedNoise => "matched-noise",
    };
    let grad = if config.alpha_prime == 0.0 { "none" } else { grad };
    match (grad, config.use_projection) {
        ("none", true) => "proj".into(),
        ("none", false) => "unconditional".into(),
        (g, true) => format!("{g}+proj"),
        (g, false) => g.into(),
    }
}

/// A fully assembled problem instance.
pub struct Instance {
    pub model: AnyScoreModel,
    pub op: ForwardOperator,
    pub weight: WeightKind,
    pub y: Array1<f64>,
    pub x_true: Option<Array1<f64>>,
    pub image_shape: Option<(usize, usize, usize)>,
    pub tangent_basis: Option<Array2<f64>>,
}

/// Canonical VP endpoints rescaled to `n` steps so the total diffusion
/// matches the 1000-step reference: `beta in (0.1/n, 20/n)`.
pub fn default_vp_spec(n: usize) -> ScheduleSpec {
    ScheduleSpec::Vp {
        n,
        beta_min: 0.1 / n as f64,
        beta_max: 20.0 / n as f64,
    }
}

/// Default VE endpoints: `sigma_min = 0.01`, `sigma_max` the maximum
/// pairwise distance in the prior dataset.
pub fn default_ve_spec(n: usize, prior: &Array2<f64>) -> ScheduleSpec {
    ScheduleSpec::Ve {
        n,
        sigma_min: 0.01,
        sigma_max: ve_sigma_max_from_data(prior).max(0.02),
    }
}

fn image_side(spec: &RunSpec) -> usize {
    spec.data.size.unwrap_or(64)
}

/// Synthetic mixture prior: `count` generated rows; the truth replaces the
/// first row only when explicitly requested (held-out by default).
fn synthetic_prior(
    spec: &RunSpec,
    dim: usize,
    x_true: &Array1<f64>,
    generate: impl Fn(usize) -> Array1<f64>,
) -> Array2<f64> {
    let count = spec.model.prior_count.unwrap_or(8);
    let include_truth = spec.model.prior_includes_truth.unwrap_or(false);
    let mut rows = Array2::zeros((count, dim));
    for k in 0..count {
        rows.row_mut(k).assign(&generate(k));
    }
    if include_truth {
        rows.row_mut(0).assign(x_true);
    }
    rows
}

fn load_truth(spec: &RunSpec) -> Result<Option<(Array1<f64>, Option<(usize, usize, usize)>)>> {
    match &spec.data.truth {
        Some(path) => {
            let raw = io::read_raw(path)?;
            let shape = (raw.height, raw.width, raw.channels);
            Ok(Some((raw.data, Some(shape))))
        }
        None => Ok(None),
    }
}

fn build_operator_for_vector(spec: &RunSpec, n: usize) -> Result<ForwardOperator> {
    let o = &spec.operator;
    if let Some(path) = &o.mask {
        return Ok(ForwardOperator::Inpainting(io::read_mask(path, 1, n, 1)?));
    }
    if let Some([start, len]) = o.hide_block {
        return Ok(ForwardOperator::Inpainting(InpaintingMask::hide_block(
            n, start, len,
        )?));
    }
    if let Some(kept) = &o.kept {
        return Ok(ForwardOperator::Inpainting(InpaintingMask::new(
            n,
            kept.clone(),
        )?));
    }
    // Default: hide a centered block of half the coordinates.
    Ok(ForwardOperator::Inpainting(InpaintingMask::hide_block(
        n,
        n / 4,
        n / 2,
    )?))
}

fn build_operator_for_image(
    spec: &RunSpec,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<ForwardOperator> {
    let o = &spec.operator;
    if let Some(path) = &o.mask {
        return Ok(ForwardOperator::Inpainting(io::read_mask(
            path, height, width, channels,
        )?));
    }
    if let Some([x0, y0, w, h]) = o.hide_box {
        return Ok(ForwardOperator::Inpainting(InpaintingMask::hide_box(
            height, width, channels, x0, y0, w, h,
        )?));
    }
    if let Some(kept) = &o.kept {
        return Ok(ForwardOperator::Inpainting(InpaintingMask::new(
            height * width * channels,
            kept.clone(),
        )?));
    }
    // Default box: half the side, placed at the scaled margin.
    let b = width / 2;
    let margin = (width / 16).max(1);
    Ok(ForwardOperator::Inpainting(InpaintingMask::hide_box(
        height, width, channels, margin, margin, b, b,
    )?))
}

/// Assemble model, operator, measurement, and ground truth for a run spec.
/// Measurements are noiseless by default; `operator.noise-sigma` adds
/// Gaussian noise to `y`.
pub fn build_instance(spec: &RunSpec) -> Result<Instance> {
    let mut instance = build_noiseless_instance(spec)?;
    if let Some(sigma) = spec.operator.noise_sigma {
        if sigma < 0.0 {
            return Err(McgError::parameter("noise-sigma must be nonnegative"));
        }
        if sigma > 0.0 {
            let mut rng = rng::rng_for_stream(spec.seed, 0xC0);
            for v in instance.y.iter_mut() {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    Ok(instance)
}

fn build_noiseless_instance(spec: &RunSpec) -> Result<Instance> {
    let config = spec.sampler_config();
    let nfe = config.nfe;
    match spec.task {
        Task::Inpaint => {
            let phantom_kind = spec.data.phantom.as_deref().unwrap_or("subspace-patch");
            match phantom_kind {
                "subspace-patch" => {
                    let n = spec.data.n.unwrap_or(50);
                    let l = spec.data.l.unwrap_or(5);
                    let tau = spec.data.tau.unwrap_or(1.0);
                    let patch = phantom::subspace_patch(n, l, 1, tau, rng::split(spec.seed, 0xD0))?;
                    let mut draw = rng::rng_for_stream(spec.seed, 0xD1);
                    let coords =
                        Array1::from_iter((0..l).map(|_| tau * draw.sample::<f64, _>(StandardNormal)));
                    let x_true = &patch.offset + &patch.basis.dot(&coords);
                    let op = build_operator_for_vector(spec, n)?;
                    let schedule = Arc::new(
                        spec.schedule
                            .map(|s| s.with_n(nfe))
                            .unwrap_or_else(|| default_vp_spec(nfe))
                            .build()?,
                    );
                    let model = AnyScoreModel::Gaussian(GaussianSubspaceScore::new(
                        schedule,
                        patch.offset.clone(),
                        patch.basis.clone(),
                        tau * tau,
                    )?);
                    let y = op.apply(&x_true)?;
                    Ok(Instance {
                        model,
                        op,
                        weight: WeightKind::Identity,
                        y,
                        x_true: Some(x_true),
                        image_shape: None,
                        tangent_basis: Some(patch.basis),
                    })
                }
                "eight-gaussians-2d" => {
                    let data = phantom::eight_gaussians_2d(512, rng::split(spec.seed, 0xD2));
                    let mut draw = rng::rng_for_stream(spec.seed, 0xD3);
                    // An unambiguous mode: observing the first coordinate of
                    // a point near (2, 0) identifies the second.
                    let x_true = ndarray::array![
                        2.0 + 0.1 * draw.sample::<f64, _>(StandardNormal),
                        0.1 * draw.sample::<f64, _>(StandardNormal)
                    ];
                    let op = match (&spec.operator.kept, &spec.operator.hide_block) {
                        (Some(kept), _) => {
                            ForwardOperator::Inpainting(InpaintingMask::new(2, kept.clone())?)
                        }
                        _ => ForwardOperator::Inpainting(InpaintingMask::new(2, vec![0])?),
                    };
                    let schedule = Arc::new(
                        spec.schedule
                            .map(|s| s.with_n(nfe))
                            .unwrap_or_else(|| default_vp_spec(nfe))
                            .build()?,
                    );
                    let model = match &spec.model.weights {
                        Some(path) => AnyScoreModel::load(path)?.with_schedule(schedule)?,
                        None => AnyScoreModel::Mixture(EmpiricalMixtureScore::new(schedule, data)?),
                    };
                    let y = op.apply(&x_true)?;
                    Ok(Instance {
                        model,
                        op,
                        weight: WeightKind::Identity,
                        y,
                        x_true: Some(x_true),
                        image_shape: None,
                        tangent_basis: None,
                    })
                }
                "shepp-logan" | "ellipses" => {
                    let side = image_side(spec);
                    let img = match phantom_kind {
                        "shepp-logan" => {
                            phantom::shepp_logan(side, phantom::SheppLoganVariant::Classical)
                        }
                        _ => phantom::random_ellipse_phantom(side, rng::split(spec.seed, 0xD4)),
                    };
                    let x_true = Array1::from_iter(img.iter().cloned());
                    let op = build_operator_for_image(spec, side, side, 1)?;
                    let prior = synthetic_prior(spec, side * side, &x_true, |k| {
                        let p = phantom::random_ellipse_phantom(
                            side,
                            rng::split(spec.seed, 0xD5 + k as u64),
                        );
                        Array1::from_iter(p.iter().cloned())
                    });
                    let schedule = Arc::new(
                        spec.schedule
                            .map(|s| s.with_n(nfe))
                            .unwrap_or_else(|| default_vp_spec(nfe))
                            .build()?,
                    );
                    let model = match &spec.model.weights {
                        Some(path) => AnyScoreModel::load(path)?.with_schedule(schedule)?,
                        None => AnyScoreModel::Mixture(EmpiricalMixtureScore::new(schedule, prior)?),
                    };
                    let y = op.apply(&x_true)?;
                    Ok(Instance {
                        model,
                        op,
                        weight: WeightKind::Identity,
                        y,
                        x_true: Some(x_true),
                        image_shape: Some((side, side, 1)),
                        tangent_basis: None,
                    })
                }
                other => Err(McgError::parameter(format!(
                    "inpaint task does not understand phantom kind '{other}'"
                ))),
            }
        }
        Task::Ct => {
            let side = image_side(spec);
            let img = phantom::shepp_logan(side, phantom::SheppLoganVariant::Classical);
            let x_true = Array1::from_iter(img.iter().cloned());
            let views = spec.operator.views.unwrap_or(30);
            let detectors = spec.operator.detectors.unwrap_or(side);
            let op = ForwardOperator::Radon(RadonTransform::new(side, views, detectors)?);
            let prior = match &spec.model.dataset {
                Some(path) => io::read_raw(path)?.to_matrix()?,
                // Random lesion phantoms sharing the skull/interior family.
                None => synthetic_prior(spec, side * side, &x_true, |k| {
                    let p = phantom::random_ellipse_phantom(
                        side,
                        rng::split(spec.seed, 0xE0 + k as u64),
                    );
                    Array1::from_iter(p.iter().cloned())
                }),
            };
            let schedule = Arc::new(
                spec.schedule
                    .map(|s| s.with_n(nfe))
                    .unwrap_or_else(|| default_ve_spec(nfe, &prior))
                    .build()?,
            );
            let model = match &spec.model.weights {
                Some(path) => AnyScoreModel::load(path)?.with_schedule(schedule)?,
                None => AnyScoreModel::Mixture(EmpiricalMixtureScore::new(schedule, prior)?),
            };
            let y = op.apply(&x_true)?;
            Ok(Instance {
                model,
                op,
                weight: WeightKind::PseudoInverse,
                y,
                x_true: Some(x_true),
                image_shape: Some((side, side, 1)),
                tangent_basis: None,
            })
        }
        Task::Colorize => {
            let side = image_side(spec);
            let x_true = phantom::color_ellipse_phantom(side, rng::split(spec.seed, 0xF0));
            let op = ForwardOperator::ColorCoupling(ColorCoupling::luminance(side * side)?);
            let prior = synthetic_prior(spec, 3 * side * side, &x_true, |k| {
                phantom::color_ellipse_phantom(side, rng::split(spec.seed, 0xF1 + k as u64))
            });
            let schedule = Arc::new(
                spec.schedule
                    .map(|s| s.with_n(nfe))
                    .unwrap_or_else(|| default_ve_spec(nfe, &prior))
                    .build()?,
            );
            let model = match &spec.model.weights {
                Some(path) => AnyScoreModel::load(path)?.with_schedule(schedule)?,
                None => AnyScoreModel::Mixture(EmpiricalMixtureScore::new(schedule, prior)?),
            };
            let y = op.apply(&x_true)?;
            Ok(Instance {
                model,
                op,
                weight: WeightKind::OperatorTranspose,
                y,
                x_true: Some(x_true),
                image_shape: Some((side, side, 3)),
                tangent_basis: None,
            })
        }
        Task::CustomDense => {
            let matrix_path = spec.operator.matrix.as_ref().ok_or_else(|| {
                McgError::parameter("custom-dense task needs operator.matrix")
            })?;
            let matrix = io::read_raw(matrix_path)?.to_matrix()?;
            let op = ForwardOperator::Dense(DenseOperator::new(matrix)?);
            let (x_true, image_shape) = load_truth(spec)?
                .ok_or_else(|| McgError::parameter("custom-dense task needs data.truth"))?;
            let dataset = match &spec.model.dataset {
                Some(path) => io::read_raw(path)?.to_matrix()?,
                None => {
                    let mut rows = Array2::zeros((1, x_true.len()));
                    rows.row_mut(0).assign(&x_true);
                    rows
                }
            };
            let schedule = Arc::new(
                spec.schedule
                    .map(|s| s.with_n(nfe))
                    .unwrap_or_else(|| default_vp_spec(nfe))
                    .build()?,
            );
            let model = match &spec.model.weights {
                Some(path) => AnyScoreModel::load(path)?.with_schedule(schedule)?,
                None => AnyScoreModel::Mixture(EmpiricalMixtureScore::new(schedule, dataset)?),
            };
            let y = op.apply(&x_true)?;
            Ok(Instance {
                model,
                op,
                weight: WeightKind::Identity,
                y,
                x_true: Some(x_true),
                image_shape,
                tangent_basis: None,
            })
        }
    }
}

fn write_steps_csv(path: &Path, steps: &[crate::solver::StepDiagnostics]) -> Result<()> {
    let rows: Vec<String> = steps
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{}",
                s.i,
                io::csv_float(Some(s.weighted_residual)),
                io::csv_float(Some(s.fixed_point_residual)),
                io::csv_float(s.tangency_ratio),
            )
        })
        .collect();
    CsvTable::new(path, STEPS_SCHEMA, STEPS_HEADER).write_all(&rows)
}

fn write_reconstruction(
    out_dir: &Path,
    x: &Array1<f64>,
    image_shape: Option<(usize, usize, usize)>,
) -> Result<()> {
    let (h, w, c) = image_shape.unwrap_or((1, x.len(), 1));
    io::write_raw(
        out_dir.join("reconstruction.raw"),
        &RawArray::new(h, w, c, x.clone())?,
    )?;
    if image_shape.is_some() {
        let plane = h * w;
        for ch in 0..c {
            let img = Array2::from_shape_fn((h, w), |(r, cc)| x[ch * plane + r * w + cc]);
            let name = if c == 1 {
                "reconstruction.pgm".to_string()
            } else {
                format!("reconstruction-ch{ch}.pgm")
            };
            io::write_pgm(out_dir.join(name), &img)?;
        }
    }
    Ok(())
}

/// Execute one solve described by the spec: writes the reconstruction, the
/// per-step diagnostics, and an appended metrics row. A failed solve leaves
/// its partial diagnostics plus a `FAILED` marker and still records a row.
pub fn run_solve(spec: &RunSpec) -> Result<MetricsRow> {
    std::fs::create_dir_all(&spec.out_dir)?;
    let instance = build_instance(spec)?;
    let config = spec.sampler_config();
    let run_id = format!(
        "{}-s{}-n{}-{}",
        spec.task.name(),
        spec.seed,
        config.nfe,
        variant_label(&config)
    );
    let mut inputs = SolveInputs::new(&instance.op, instance.weight, &instance.y);
    if let Some(t) = &instance.x_true {
        inputs = inputs.with_truth(t);
    }
    if let Some(s) = instance.image_shape {
        inputs = inputs.with_image_shape(s);
    }
    if let Some(b) = &instance.tangent_basis {
        inputs = inputs.with_tangent_basis(b);
    }
    let outcome = solve_inverse(&config, &instance.model, &inputs);
    let row = match outcome {
        Ok(report) => {
            write_reconstruction(&spec.out_dir, &report.x0_hat, instance.image_shape)?;
            write_steps_csv(&spec.out_dir.join("steps.csv"), &report.steps)?;
            MetricsRow {
                run_id,
                task: spec.task.name().into(),
                variant: variant_label(&config),
                nfe: config.nfe,
                alpha_prime: config.alpha_prime,
                mse: report.mse,
                psnr_db: report.psnr_db,
                ssim: report.ssim,
                mse_mc: Some(report.mse_mc),
                tangency_ratio: max_tangency(&report),
                seconds: report.seconds,
                status: "ok".into(),
            }
        }
        Err(failure) => {
            write_steps_csv(&spec.out_dir.join("steps.csv"), &failure.steps)?;
            std::fs::write(spec.out_dir.join("FAILED"), format!("{}\n", failure.error))?;
            MetricsRow {
                run_id,
                task: spec.task.name().into(),
                variant: variant_label(&config),
                nfe: config.nfe,
                alpha_prime: config.alpha_prime,
                mse: None,
                psnr_db: None,
                ssim: None,
                mse_mc: None,
                tangency_ratio: None,
                seconds: 0.0,
                status: format!("failed: {}", failure.error),
            }
        }
    };
    CsvTable::new(spec.out_dir.join("metrics.csv"), METRICS_SCHEMA, METRICS_HEADER)
        .append(&row.to_csv())?;
    Ok(row)
}

fn max_tangency(report: &ReconstructionReport) -> Option<f64> {
    report
        .steps
        .iter()
        .filter_map(|s| s.tangency_ratio)
        .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

/// Which parameter an ablation sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Nfe,
    Alpha,
}

/// One solve per (value, seed replicate) in a worker pool; per-cell failures
/// are recorded and the sweep continues. Returns the sweep table path.
pub fn run_ablation(
    spec: &RunSpec,
    sweep: SweepKind,
    values: &[f64],
    seeds: usize,
) -> Result<PathBuf> {
    if values.len() < 2 {
        return Err(McgError::parameter("a sweep needs at least two values"));
    }
    std::fs::create_dir_all(&spec.out_dir)?;
    let mut cells = Vec::new();
    for (vi, &value) in values.iter().enumerate() {
        for rep in 0..seeds.max(1) {
            cells.push((vi, value, rep));
        }
    }
    let results: Vec<(usize, usize, MetricsRow)> = cells
        .par_iter()
        .map(|&(vi, value, rep)| {
            let mut cell_spec = spec.clone();
            let label = match sweep {
                SweepKind::Nfe => format!("nfe-{value}"),
                SweepKind::Alpha => format!("alpha-{value}"),
            };
            cell_spec.out_dir = spec.out_dir.join(format!("{label}/rep-{rep}"));
            cell_spec.seed = rng::split(spec.seed, (vi * 1000 + rep) as u64);
            match sweep {
                SweepKind::Nfe => cell_spec.sampler.nfe = Some(value as usize),
                SweepKind::Alpha => cell_spec.sampler.alpha_prime = Some(value),
            }
            let row = run_solve(&cell_spec).unwrap_or_else(|e| MetricsRow {
                run_id: format!("{label}/rep-{rep}"),
                task: spec.task.name().into(),
                variant: "setup-error".into(),
                nfe: 0,
                alpha_prime: 0.0,
                mse: None,
                psnr_db: None,
                ssim: None,
                mse_mc: None,
                tangency_ratio: None,
                seconds: 0.0,
                status: format!("failed: {e}"),
            });
            (vi, rep, row)
        })
        .collect();
    let mut sorted = results;
    sorted.sort_by_key(|(vi, rep, _)| (*vi, *rep));
    let rows: Vec<String> = sorted
        .iter()
        .map(|(vi, rep, row)| format!("{},{},{}", values[*vi], rep, row.to_csv()))
        .collect();
    let path = spec.out_dir.join("sweep.csv");
    CsvTable::new(
        &path,
        "mcg-sweep v1",
        "value,replicate,run_id,task,variant,nfe,alpha_prime,mse,psnr_db,ssim,mse_mc,tangency_ratio,seconds,status",
    )
    .write_all(&rows)?;
    if sweep == SweepKind::Nfe {
        write_nfe_diagnostic(&spec.out_dir, values, &sorted)?;
    }
    Ok(path)
}

/// More steps do not always help: for projection-only sampling the error can
/// grow again with NFE. Recorded as an observation alongside the sweep, never
/// asserted.
fn write_nfe_diagnostic(
    out_dir: &Path,
    values: &[f64],
    cells: &[(usize, usize, MetricsRow)],
) -> Result<()> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mean_mse = |vi: usize| {
        let ms: Vec<f64> = cells
            .iter()
            .filter(|(i, _, row)| *i == vi && row.status == "ok")
            .filter_map(|(_, _, row)| row.mse)
            .collect();
        if ms.is_empty() {
            None
        } else {
            Some(ms.iter().sum::<f64>() / ms.len() as f64)
        }
    };
    let mut lines = vec!["mean MSE by NFE (completed cells only):".to_string()];
    for &vi in &order {
        match mean_mse(vi) {
            Some(m) => lines.push(format!("  nfe {:>6}: {m:.6e}", values[vi])),
            None => lines.push(format!("  nfe {:>6}: no completed cells", values[vi])),
        }
    }
    if order.len() >= 2 {
        let last = order[order.len() - 1];
        let prev = order[order.len() - 2];
        if let (Some(m_last), Some(m_prev)) = (mean_mse(last), mean_mse(prev)) {
            if m_last >= m_prev {
                lines.push(format!(
                    "note: error did not improve from nfe {} to nfe {} \
                     ({m_prev:.3e} -> {m_last:.3e}); more steps are not curing this variant",
                    values[prev], values[last]
                ));
            } else {
                lines.push(format!(
                    "note: error still improving at the largest nfe \
                     ({m_prev:.3e} -> {m_last:.3e})",

                ));
            }
        }
    }
    std::fs::write(out_dir.join("nfe-diagnostic.txt"), lines.join("\n") + "\n")?;
    Ok(())
}

/// Runs the full geometry battery with its default grids, writing one CSV
/// per check. Returns true when every check passed.
pub fn run_verify_geometry(out_dir: &Path, seed: u64, mutation: GradientMutation) -> Result<bool> {
    std::fs::create_dir_all(out_dir)?;
    let mut all_pass = true;

    // Concentration of noised manifold data.
    let sched = Schedule::vp(1000, 1e-4, 0.02)?;
    let mut rows = Vec::new();
    for (n, l) in [(100usize, 2usize), (400, 4)] {
        let spec = ManifoldSpec::random(n, l, rng::split(seed, 0x41))?;
        let res = check_concentration(&spec, &sched, 500, 100_000, 0.01, 5.0, rng::split(seed, 0x42))?;
        all_pass &= res.passed;
        rows.push(format!(
            "{n},{l},{},{},{},{},{},{},{}",
            res.i,
            io::csv_float(Some(res.r_i)),
            io::csv_float(Some(res.epsilon_band)),
            io::csv_float(Some(1.0 - res.delta_target)),
            io::csv_float(Some(res.empirical_fraction_in_band)),
            res.sample_count,
            res.passed,
        ));
    }
    CsvTable::new(
        out_dir.join("concentration.csv"),
        "mcg-geometry-concentration v1",
        "n,l,i,r_i,epsilon,bound,fraction,samples,pass",
    )
    .write_all(&rows)?;

    // Projector structure of the denoiser Jacobian.
    let spec = ManifoldSpec::random(50, 5, rng::split(seed, 0x43))?;
    let tau = 1.0;
    let levels = Arc::new(Schedule::ve(3, 0.01, 1.0)?);
    let oracle = GaussianSubspaceScore::new(
        levels.clone(),
        spec.offset.clone(),
        spec.tangent_basis.clone(),
        tau * tau,
    )?;
    let mut rows = Vec::new();
    let mut idem_gaps = Vec::new();
    for i in (1..=3).rev() {
        let check = check_projector(&spec, &oracle, i, 3, rng::split(seed, 0x44));
        let b = levels.b(i);
        let c = tau * tau / (tau * tau + b * b);
        let closed = c * &spec.tangent_basis.dot(&spec.tangent_basis.t());
        let closed_gap = (&check.jacobian - &closed)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let pass = check.passed && closed_gap <= 1e-8;
        all_pass &= pass;
        idem_gaps.push(check.idempotence_gap);
        rows.push(format!(
            "{i},{},{},{},{},{},{pass}",
            io::csv_float(Some(b)),
            io::csv_float(Some(check.symmetry_gap)),
            io::csv_float(Some(check.idempotence_gap)),
            io::csv_float(Some(check.max_normal_ratio)),
            io::csv_float(Some(closed_gap)),
        ));
    }
    // b decreasing along the rows: the idempotence gap must shrink with it.
    let monotone = idem_gaps.windows(2).all(|w| w[0] > w[1]);
    all_pass &= monotone;
    rows.push(format!(",,,,,idempotence_monotone,{monotone}"));
    CsvTable::new(
        out_dir.join("projector.csv"),
        "mcg-geometry-projector v1",
        "i,b,symmetry,idempotence_gap,normal_ratio,closed_form_gap,pass",
    )
    .write_all(&rows)?;

    // Tangency of the constrained gradient vs the naive one.
    let op = ForwardOperator::Inpainting(InpaintingMask::new(50, (0..25).collect())?);
    let mut draw = rng::rng_for_stream(seed, 0x45);
    let y = Array1::from_iter((0..25).map(|_| draw.sample::<f64, _>(StandardNormal)));
    let mut rows = Vec::new();
    for i in 1..=3 {
        let check = check_tangency(
            &spec,
            &oracle,
            &op,
            WeightKind::Identity,
            &y,
            i,
            20,
            rng::split(seed, 0x46),
            mutation,
        )?;
        all_pass &= check.passed;
        rows.push(format!(
            "{i},random-mask,{},{},{}",
            io::csv_float(Some(check.max_mcg_ratio)),
            io::csv_float(Some(check.max_naive_ratio)),
            check.passed,
        ));
    }
    // Adversarial operator measuring a normal direction: the naive gradient
    // must leave the tangent space decisively.
    let adversarial = normal_direction_operator(&spec, rng::split(seed, 0x47))?;
    let y1 = Array1::from_vec(vec![0.7]);
    let check = check_tangency(
        &spec,
        &oracle,
        &adversarial,
        WeightKind::Identity,
        &y1,
        2,
        10,
        rng::split(seed, 0x48),
        mutation,
    )?;
    let adversarial_pass = check.passed && check.max_naive_ratio >= NAIVE_RATIO_FLOOR;
    all_pass &= adversarial_pass;
    rows.push(format!(
        "2,normal-direction,{},{},{adversarial_pass}",
        io::csv_float(Some(check.max_mcg_ratio)),
        io::csv_float(Some(check.max_naive_ratio)),
    ));
    CsvTable::new(
        out_dir.join("tangency.csv"),
        "mcg-geometry-tangency v1",
        "i,operator,mcg_normal_ratio,naive_normal_ratio,pass",
    )
    .write_all(&rows)?;

    // Thresholds recorded alongside for the reader.
    std::fs::write(
        out_dir.join("thresholds.txt"),
        format!(
            "projector symmetry/normal tolerance: {PROJECTOR_TOL}\n\
             tangency tolerance: {TANGENCY_TOL}\n\
             naive-ratio floor (adversarial): {NAIVE_RATIO_FLOOR}\n"
        ),
    )?;
    Ok(all_pass)
}

/// Phantom/dataset generation for the CLI. Returns the files written.
pub fn make_phantom(
    kind: &str,
    size: usize,
    count: usize,
    n: usize,
    l: usize,
    tau: f64,
    variant: phantom::SheppLoganVariant,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let save_raw = |name: &str, arr: &RawArray| -> Result<PathBuf> {
        let path = out_dir.join(name);
        io::write_raw(&path, arr)?;
        Ok(path)
    };
    match kind {
        "shepp-logan" => {
            if !(16..=256).contains(&size) {
                return Err(McgError::parameter("size must lie in [16, 256]"));
            }
            let img = phantom::shepp_logan(size, variant);
            written.push(save_raw("phantom.raw", &RawArray::from_image(&img))?);
            let pgm = out_dir.join("phantom.pgm");
            io::write_pgm(&pgm, &img)?;
            written.push(pgm);
        }
        "ellipses" => {
            if !(16..=256).contains(&size) {
                return Err(McgError::parameter("size must lie in [16, 256]"));
            }
            let img = phantom::random_ellipse_phantom(size, seed);
            written.push(save_raw("phantom.raw", &RawArray::from_image(&img))?);
            let pgm = out_dir.join("phantom.pgm");
            io::write_pgm(&pgm, &img)?;
            written.push(pgm);
        }
        "color-ellipses" => {
            if !(16..=256).contains(&size) {
                return Err(McgError::parameter("size must lie in [16, 256]"));
            }
            let x = phantom::color_ellipse_phantom(size, seed);
            written.push(save_raw("phantom.raw", &RawArray::new(size, size, 3, x)?)?);
        }
        "eight-gaussians-2d" => {
            let pts = phantom::eight_gaussians_2d(count, seed);
            written.push(save_raw("points.raw", &RawArray::from_matrix(&pts))?);
        }
        "subspace-patch" => {
            let patch = phantom::subspace_patch(n, l, count, tau, seed)?;
            written.push(save_raw("points.raw", &RawArray::from_matrix(&patch.points))?);
            written.push(save_raw("basis.raw", &RawArray::from_matrix(&patch.basis))?);
            written.push(save_raw(
                "offset.raw",
                &RawArray::new(1, n, 1, patch.offset.clone())?,
            )?);
        }
        other => {
            return Err(McgError::parameter(format!("unknown phantom kind '{other}'")));
        }
    }
    Ok(written)
}
