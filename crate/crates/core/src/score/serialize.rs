//! Flat binary serialization of score models.
//!
//! Layout: magic `MCGSCOR1`, a kind tag byte, the schedule endpoints (so the
//! model rebuilds its own schedule on load), a dimension header, then all
//! 64-bit floats little-endian in field declaration order.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{McgError, Result};
use crate::schedule::{Schedule, ScheduleSpec};

use super::{Activation, EmpiricalMixtureScore, GaussianSubspaceScore, MlpScore, ScoreModel};

const MAGIC: &[u8; 8] = b"MCGSCOR1";

const KIND_GAUSSIAN: u8 = 0;
const KIND_MIXTURE: u8 = 1;
const KIND_MLP: u8 = 2;

/// Any of the three score-model kinds, for uniform load/save and dispatch.
pub enum AnyScoreModel {
    Gaussian(GaussianSubspaceScore),
    Mixture(EmpiricalMixtureScore),
    Mlp(MlpScore),
}

impl ScoreModel for AnyScoreModel {
    fn dim(&self) -> usize {
        match self {
            AnyScoreModel::Gaussian(m) => m.dim(),
            AnyScoreModel::Mixture(m) => m.dim(),
            AnyScoreModel::Mlp(m) => m.dim(),
        }
    }

    fn schedule(&self) -> &Schedule {
        match self {
            AnyScoreModel::Gaussian(m) => m.schedule(),
            AnyScoreModel::Mixture(m) => m.schedule(),
            AnyScoreModel::Mlp(m) => m.schedule(),
        }
    }

    fn score(&self, x: &Array1<f64>, i: usize) -> Array1<f64> {
        match self {
            AnyScoreModel::Gaussian(m) => m.score(x, i),
            AnyScoreModel::Mixture(m) => m.score(x, i),
            AnyScoreModel::Mlp(m) => m.score(x, i),
        }
    }

    fn score_vjp(&self, x: &Array1<f64>, i: usize, v: &Array1<f64>) -> Array1<f64> {
        match self {
            AnyScoreModel::Gaussian(m) => m.score_vjp(x, i, v),
            AnyScoreModel::Mixture(m) => m.score_vjp(x, i, v),
            AnyScoreModel::Mlp(m) => m.score_vjp(x, i, v),
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: MAGIC.to_vec() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl Iterator<Item = &'a f64>) {
        for &v in vs {
            self.f64(v);
        }
    }
    fn schedule(&mut self, spec: ScheduleSpec) {
        match spec {
            ScheduleSpec::Vp { n, beta_min, beta_max } => {
                self.u8(0);
                self.u32(n as u32);
                self.f64(beta_min);
                self.f64(beta_max);
            }
            ScheduleSpec::Ve { n, sigma_min, sigma_max } => {
                self.u8(1);
                self.u32(n as u32);
                self.f64(sigma_min);
                self.f64(sigma_max);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Result<Self> {
        if buf.len() < 8 || &buf[..8] != MAGIC {
            return Err(McgError::Parse("bad score-model magic".into()));
        }
        Ok(Reader { buf, pos: 8 })
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(McgError::Parse("score-model file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn schedule(&mut self) -> Result<Arc<Schedule>> {
        let kind = self.u8()?;
        let n = self.u32()? as usize;
        let p1 = self.f64()?;
        let p2 = self.f64()?;
        let spec = match kind {
            0 => ScheduleSpec::Vp { n, beta_min: p1, beta_max: p2 },
            1 => ScheduleSpec::Ve { n, sigma_min: p1, sigma_max: p2 },
            other => return Err(McgError::Parse(format!("unknown schedule kind {other}"))),
        };
        Ok(Arc::new(spec.build()?))
    }
}

impl AnyScoreModel {
    /// Rebind the model to a different schedule (NFE sweeps rebuild the
    /// schedule rather than striding a longer one).
    pub fn with_schedule(self, schedule: Arc<Schedule>) -> Result<AnyScoreModel> {
        Ok(match self {
            AnyScoreModel::Gaussian(m) => AnyScoreModel::Gaussian(GaussianSubspaceScore::new(
                schedule,
                m.mean().clone(),
                m.basis().clone(),
                m.tau2(),
            )?),
            AnyScoreModel::Mixture(m) => AnyScoreModel::Mixture(EmpiricalMixtureScore::new(
                schedule,
                m.data().clone(),
            )?),
            AnyScoreModel::Mlp(mut m) => {
                m.rebind_schedule(schedule);
                AnyScoreModel::Mlp(m)
            }
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            AnyScoreModel::Gaussian(m) => {
                w.u8(KIND_GAUSSIAN);
                w.schedule(m.schedule().spec());
                let (n, l) = m.basis().dim();
                w.u32(n as u32);
                w.u32(l as u32);
                w.f64s(m.mean().iter());
                w.f64s(m.basis().iter());
                w.f64(m.tau2());
            }
            AnyScoreModel::Mixture(m) => {
                w.u8(KIND_MIXTURE);
                w.schedule(m.schedule().spec());
                w.u32(m.data().nrows() as u32);
                w.u32(m.data().ncols() as u32);
                w.f64s(m.data().iter());
            }
            AnyScoreModel::Mlp(m) => {
                w.u8(KIND_MLP);
                w.schedule(m.schedule().spec());
                let (input_dim, hidden, embed_dim, activation) = m.arch();
                w.u32(input_dim as u32);
                w.u32(embed_dim as u32);
                w.u8(match activation {
                    Activation::Silu => 0,
                    Activation::Tanh => 1,
                });
                w.u32(hidden.len() as u32);
                for h in &hidden {
                    w.u32(*h as u32);
                }
                w.f64s(m.parameters());
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<AnyScoreModel> {
        let mut r = Reader::new(bytes)?;
        let kind = r.u8()?;
        let schedule = r.schedule()?;
        match kind {
            KIND_GAUSSIAN => {
                let n = r.u32()? as usize;
                let l = r.u32()? as usize;
                let mean = Array1::from_vec(r.f64s(n)?);
                let basis = Array2::from_shape_vec((n, l), r.f64s(n * l)?)
                    .map_err(|e| McgError::Parse(e.to_string()))?;
                let tau2 = r.f64()?;
                Ok(AnyScoreModel::Gaussian(GaussianSubspaceScore::new(
                    schedule, mean, basis, tau2,
                )?))
            }
            KIND_MIXTURE => {
                let k = r.u32()? as usize;
                let n = r.u32()? as usize;
                let data = Array2::from_shape_vec((k, n), r.f64s(k * n)?)
                    .map_err(|e| McgError::Parse(e.to_string()))?;
                Ok(AnyScoreModel::Mixture(EmpiricalMixtureScore::new(
                    schedule, data,
                )?))
            }
            KIND_MLP => {
                let input_dim = r.u32()? as usize;
                let embed_dim = r.u32()? as usize;
                let activation = match r.u8()? {
                    0 => Activation::Silu,
                    1 => Activation::Tanh,
                    other => {
                        return Err(McgError::Parse(format!("unknown activation {other}")))
                    }
                };
                let n_hidden = r.u32()? as usize;
                let mut hidden = Vec::with_capacity(n_hidden);
                for _ in 0..n_hidden {
                    hidden.push(r.u32()? as usize);
                }
                let remaining = (r.buf.len() - r.pos) / 8;
                let params = r.f64s(remaining)?;
                let mut it = params.into_iter();
                Ok(AnyScoreModel::Mlp(MlpScore::from_parts(
                    schedule, input_dim, &hidden, embed_dim, activation, &mut it,
                )?))
            }
            other => Err(McgError::Parse(format!("unknown model kind {other}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<AnyScoreModel> {
        let bytes = std::fs::read(path)?;
        AnyScoreModel::from_bytes(&bytes)
    }
}
