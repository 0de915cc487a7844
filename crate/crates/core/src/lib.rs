//! Diffusion-model solvers for linear inverse problems with the
//! manifold-constrained gradient (MCG) correction.
//!
//! The crate provides:
//!
//! - discrete VP/VE noise schedules ([`schedule`]);
//! - score models: two analytic oracles (Gaussian subspace, empirical
//!   mixture) and a trainable MLP denoiser, all exposing Tweedie denoising
//!   and exact Jacobian-vector products ([`score`]);
//! - linear forward operators (inpainting mask, channel coupling, parallel
//!   beam tomography, dense) with adjoints, pseudo-inverses, and
//!   measurement-consistency projections ([`operators`]);
//! - reverse-diffusion samplers: unconditional, projection-only, and MCG
//!   variants, for ancestral VP and predictor-corrector VE families
//!   ([`solver`]);
//! - numerical verification of the geometric claims behind the method
//!   (noise concentration, denoiser projector structure, gradient tangency)
//!   ([`geometry`]);
//! - phantoms, metrics, file formats, and the benchmark front end used by
//!   the `mcg` CLI ([`phantom`], [`metrics`], [`io`], [`bench`]).

pub mod bench;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod operators;
pub mod phantom;
pub mod rng;
pub mod runspec;
pub mod schedule;
pub mod score;
pub mod solver;

pub use error::{McgError, Result};
pub use schedule::{Schedule, ScheduleSpec, SdeKind};
pub use score::ScoreModel;
