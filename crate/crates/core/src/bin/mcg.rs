//! Benchmark CLI: phantom generation, score training, inverse-problem
//! solving, ablation sweeps, and geometry verification.
//!
//! Every command is a function of its arguments and input files only; a seed
//! is always required and nothing is read from the environment.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use mcg_core::bench::{self, SweepKind};
use mcg_core::geometry::GradientMutation;
use mcg_core::io;
use mcg_core::phantom::SheppLoganVariant;
use mcg_core::runspec::RunSpec;
use mcg_core::schedule::ScheduleSpec;
use mcg_core::score::{train_dsm, AnyScoreModel, MlpConfig};

#[derive(Parser)]
#[command(
    name = "mcg",
    about = "Diffusion-model solvers for linear inverse problems with manifold-constrained gradients",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom image or toy dataset.
    MakePhantom(MakePhantomArgs),
    /// Train the MLP score network on a dataset by denoising score matching.
    TrainScore(TrainScoreArgs),
    /// Solve one inverse problem described by a run spec.
    Solve(SolveArgs),
    /// Sweep NFE or alpha' over repeated solves.
    Ablate(AblateArgs),
    /// Run the geometric verification battery.
    VerifyGeometry(VerifyGeometryArgs),
}

#[derive(Args)]
struct MakePhantomArgs {
    /// shepp-logan | ellipses | color-ellipses | eight-gaussians-2d | subspace-patch
    #[arg(long)]
    kind: String,
    /// Image side for image phantoms (16..=256).
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Point count for point-cloud phantoms.
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Ambient dimension (subspace-patch).
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Manifold dimension (subspace-patch).
    #[arg(long, default_value_t = 5)]
    l: usize,
    /// Tangent scale (subspace-patch).
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// classical | modified intensities for shepp-logan.
    #[arg(long, default_value = "classical")]
    variant: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainScoreArgs {
    /// Training points, raw-float rows x dim x 1.
    #[arg(long)]
    dataset: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Training loss log (iteration, loss per line).
    #[arg(long)]
    loss_log: Option<PathBuf>,
    /// vp | ve
    #[arg(long, default_value = "vp")]
    schedule_kind: String,
    #[arg(long, default_value_t = 1000)]
    nfe: usize,
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    beta_max: Option<f64>,
    #[arg(long)]
    sigma_min: Option<f64>,
    #[arg(long)]
    sigma_max: Option<f64>,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 4000)]
    iterations: usize,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct SolveArgs {
    /// Run spec (TOML). The canonical form; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// inpaint | colorize | ct | custom-dense (required without --spec).
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    nfe: Option<usize>,
    #[arg(long)]
    alpha_prime: Option<f64>,
    /// none | mcg-tweedie | matched-noise
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    projection: Option<bool>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    /// Mask file for inpainting.
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Run spec (TOML) describing the base instance.
    #[arg(long)]
    spec: PathBuf,
    /// nfe | alpha
    #[arg(long)]
    sweep: String,
    /// Sweep values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Replicates per value.
    #[arg(long, default_value_t = 3)]
    seeds: usize,
}

#[derive(Args)]
struct VerifyGeometryArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Deliberately break the gradient to prove the checks can fail:
    /// `negate-vjp`.
    #[arg(long)]
    inject_bug: Option<String>,
}

fn parse_variant(s: &str) -> Result<mcg_core::solver::GradientVariant, String> {
    use mcg_core::solver::GradientVariant::*;
    match s {
        "none" => Ok(None),
        "mcg-tweedie" | "mcg" => Ok(McgTweedie),
        "matched-noise" => Ok(MatchedNoise),
        other => Err(format!("unknown gradient variant '{other}'")),
    }
}

fn parse_task(s: &str) -> Result<mcg_core::runspec::Task, String> {
    use mcg_core::runspec::Task::*;
    match s {
        "inpaint" => Ok(Inpaint),
        "colorize" => Ok(Colorize),
        "ct" => Ok(Ct),
        "custom-dense" => Ok(CustomDense),
        other => Err(format!("unknown task '{other}'")),
    }
}

fn solve_spec(args: &SolveArgs) -> Result<RunSpec, String> {
    let mut spec = match &args.spec {
        Some(path) => RunSpec::from_file(path).map_err(|e| e.to_string())?,
        None => {
            let task = args.task.as_deref().ok_or("either --spec or --task is required")?;
            let seed = args.seed.ok_or("--seed is required without --spec")?;
            let out_dir = args.out_dir.clone().ok_or("--out-dir is required without --spec")?;
            RunSpec::from_toml_str(&format!(
                "task = \"{}\"\nseed = {}\nout-dir = \"{}\"\n",
                parse_task(task)?.name(),
                seed,
                out_dir.display()
            ))
            .map_err(|e| e.to_string())?
        }
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(out) = &args.out_dir {
        spec.out_dir = out.clone();
    }
    if let Some(nfe) = args.nfe {
        spec.sampler.nfe = Some(nfe);
    }
    if let Some(a) = args.alpha_prime {
        spec.sampler.alpha_prime = Some(a);
    }
    if let Some(v) = &args.variant {
        spec.sampler.variant = Some(parse_variant(v)?);
    }
    if let Some(p) = args.projection {
        spec.sampler.projection = Some(p);
    }
    if let Some(v) = args.views {
        spec.operator.views = Some(v);
    }
    if let Some(s) = args.size {
        spec.data.size = Some(s);
    }
    if let Some(m) = &args.mask {
        spec.operator.mask = Some(m.clone());
    }
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn run() -> Result<bool, String> {
    match Cli::parse().command {
        Command::MakePhantom(a) => {
            let variant = match a.variant.as_str() {
                "classical" => SheppLoganVariant::Classical,
                "modified" => SheppLoganVariant::Modified,
                other => return Err(format!("unknown variant '{other}'")),
            };
            let files = bench::make_phantom(
                &a.kind, a.size, a.count, a.n, a.l, a.tau, variant, a.seed, &a.out_dir,
            )
            .map_err(|e| e.to_string())?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(true)
        }
        Command::TrainScore(a) => {
            let data = io::read_raw(&a.dataset)
                .and_then(|r| r.to_matrix())
                .map_err(|e| e.to_string())?;
            let spec = match a.schedule_kind.as_str() {
                "vp" => ScheduleSpec::Vp {
                    n: a.nfe,
                    beta_min: a.beta_min.unwrap_or(0.1 / a.nfe as f64),
                    beta_max: a.beta_max.unwrap_or(20.0 / a.nfe as f64),
                },
                "ve" => ScheduleSpec::Ve {
                    n: a.nfe,
                    sigma_min: a.sigma_min.unwrap_or(0.01),
                    sigma_max: a.sigma_max.unwrap_or_else(|| {
                        mcg_core::schedule::ve_sigma_max_from_data(&data).max(0.02)
                    }),
                },
                other => return Err(format!("unknown schedule kind '{other}'")),
            };
            let schedule = Arc::new(spec.build().map_err(|e| e.to_string())?);
            let config = MlpConfig {
                input_dim: data.ncols(),
                hidden: a.hidden.clone(),
                embed_dim: a.embed_dim,
                activation: mcg_core::score::Activation::Silu,
                learning_rate: a.learning_rate,
                batch_size: a.batch_size,
                iterations: a.iterations,
                log_every: (a.iterations / 20).max(1),
            };
            let outcome = train_dsm(&config, &data, schedule, a.seed).map_err(|e| e.to_string())?;
            if let Some(log) = &a.loss_log {
                io::write_loss_log(log, &outcome.loss_history).map_err(|e| e.to_string())?;
            }
            AnyScoreModel::Mlp(outcome.model)
                .save(&a.out)
                .map_err(|e| e.to_string())?;
            println!("wrote {}", a.out.display());
            if let Some((iter, loss)) = outcome.loss_history.last() {
                println!("final training loss at iteration {iter}: {loss:.6}");
            }
            Ok(true)
        }
        Command::Solve(a) => {
            let spec = solve_spec(&a)?;
            let row = bench::run_solve(&spec).map_err(|e| e.to_string())?;
            println!(
                "{}: status={} mse={} psnr={} mse_mc={} ({} NFE, {:.2}s)",
                row.run_id,
                row.status,
                io::csv_float(row.mse),
                io::csv_float(row.psnr_db),
                io::csv_float(row.mse_mc),
                row.nfe,
                row.seconds,
            );
            Ok(row.status == "ok")
        }
        Command::Ablate(a) => {
            let spec = RunSpec::from_file(&a.spec).map_err(|e| e.to_string())?;
            let sweep = match a.sweep.as_str() {
                "nfe" => SweepKind::Nfe,
                "alpha" => SweepKind::Alpha,
                other => return Err(format!("unknown sweep '{other}'")),
            };
            let table = bench::run_ablation(&spec, sweep, &a.values, a.seeds)
                .map_err(|e| e.to_string())?;
            println!("wrote {}", table.display());
            Ok(true)
        }
        Command::VerifyGeometry(a) => {
            let mutation = match a.inject_bug.as_deref() {
                None => GradientMutation::None,
                Some("negate-vjp") => GradientMutation::NegateVjpTerm,
                Some(other) => return Err(format!("unknown bug injection '{other}'")),
            };
            let ok = bench::run_verify_geometry(&a.out_dir, a.seed, mutation)
                .map_err(|e| e.to_string())?;
            println!(
                "geometry checks: {} (tables under {})",
                if ok { "all passed" } else { "FAILED" },
                a.out_dir.display()
            );
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
