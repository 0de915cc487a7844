//! Trainable MLP score network.
//!
//! The network maps `[x ; embed(i/N)]` through fully connected layers with a
//! smooth activation and predicts the score directly. Epsilon predictions are
//! available through the schedule's `score_to_epsilon` conversion; training
//! minimizes the epsilon-matching form `||b_i s(x_i, i) + z||^2`, which is the
//! `b_i^2`-weighted denoising score-matching regression of `s` onto
//! `(a_i x0 - x_i) / b_i^2`.
//!
//! Reverse-mode passes are written out by hand: one for weight gradients
//! (training) and one for input gradients (`score_vjp`).

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{McgError, Result};
use crate::rng;
use crate::schedule::Schedule;

use super::ScoreModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone)]
pub struct MlpConfig {
    /// Signal dimension `n`.
    pub input_dim: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Sinusoidal timestep-embedding size (even).
    pub embed_dim: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Loss-log cadence in iterations.
    pub log_every: usize,
}

impl MlpConfig {
    /// Defaults that train well on the toy 2D datasets.
    pub fn for_dim(input_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden: vec![64, 64],
            embed_dim: 16,
            activation: Activation::Silu,
            learning_rate: 1e-3,
            batch_size: 64,
            iterations: 4000,
            log_every: 200,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    /// `out x in`.
    w: Array2<f64>,
    b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpScore {
    schedule: Arc<Schedule>,
    input_dim: usize,
    embed_dim: usize,
    activation: Activation,
    layers: Vec<Layer>,
}

struct ForwardCache {
    /// Input to each layer (so `inputs[0]` is `[x ; emb]`).
    inputs: Vec<Array1<f64>>,
    /// Pre-activations of the hidden layers.
    zs: Vec<Array1<f64>>,
    out: Array1<f64>,
}

impl MlpScore {
    /// Freshly initialized network (He-style scaled normal weights).
    pub fn init(config: &MlpConfig, schedule: Arc<Schedule>, seed: u64) -> Result<Self> {
        if config.embed_dim == 0 || config.embed_dim % 2 != 0 {
            return Err(McgError::parameter("embed_dim must be positive and even"));
        }
        if config.input_dim == 0 {
            return Err(McgError::parameter("input_dim must be positive"));
        }
        let mut rng = rng::rng_for_stream(seed, 0x10);
        let mut dims = vec![config.input_dim + config.embed_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(config.input_dim);
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let weights =
                Array2::from_shape_fn((fan_out, fan_in), |_| std * rng.sample::<f64, _>(StandardNormal));
            layers.push(Layer {
                w: weights,
                b: Array1::zeros(fan_out),
            });
        }
        Ok(MlpScore {
            schedule,
            input_dim: config.input_dim,
            embed_dim: config.embed_dim,
            activation: config.activation,
            layers,
        })
    }

    pub fn rebind_schedule(&mut self, schedule: Arc<Schedule>) {
        self.schedule = schedule;
    }

    pub(crate) fn arch(&self) -> (usize, Vec<usize>, usize, Activation) {
        let hidden = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.b.len())
            .collect();
        (self.input_dim, hidden, self.embed_dim, self.activation)
    }

    pub(crate) fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub(crate) fn from_parts(
        schedule: Arc<Schedule>,
        input_dim: usize,
        hidden: &[usize],
        embed_dim: usize,
        activation: Activation,
        params: &mut impl Iterator<Item = f64>,
    ) -> Result<Self> {
        let mut dims = vec![input_dim + embed_dim];
        dims.extend_from_slice(hidden);
        dims.push(input_dim);
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut weights = Array2::zeros((fan_out, fan_in));
            for r in 0..fan_out {
                for c in 0..fan_in {
                    weights[(r, c)] = params
                        .next()
                        .ok_or_else(|| McgError::Parse("mlp weights truncated".into()))?;
                }
            }
            let mut bias = Array1::zeros(fan_out);
            for r in 0..fan_out {
                bias[r] = params
                    .next()
                    .ok_or_else(|| McgError::Parse("mlp weights truncated".into()))?;
            }
            layers.push(Layer { w: weights, b: bias });
        }
        Ok(MlpScore {
            schedule,
            input_dim,
            embed_dim,
            activation,
            layers,
        })
    }

    fn embed(&self, i: usize) -> Array1<f64> {
        // Sinusoidal features of the continuous time t = i/N, scaled so the
        // fastest feature resolves single steps of a 1000-step schedule.
        let t = i as f64 / self.schedule.n() as f64;
        let half = self.embed_dim / 2;
        let mut e = Array1::zeros(self.embed_dim);
        for k in 0..half {
            let freq = 10f64.powf(-4.0 * k as f64 / half.max(1) as f64);
            let arg = 1000.0 * t * freq;
            e[k] = arg.sin();
            e[half + k] = arg.cos();
        }
        e
    }

    fn forward_cached(&self, x: &Array1<f64>, i: usize) -> ForwardCache {
        let mut input = Array1::zeros(self.input_dim + self.embed_dim);
        input.slice_mut(ndarray::s![..self.input_dim]).assign(x);
        input
            .slice_mut(ndarray::s![self.input_dim..])
            .assign(&self.embed(i));
        let mut inputs = vec![input];
        let mut zs = Vec::new();
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let z = layer.w.dot(inputs.last().unwrap()) + &layer.b;
            if idx == last {
                return ForwardCache { inputs, zs, out: z };
            }
            let h = z.mapv(|v| self.activation.apply(v));
            zs.push(z);
            inputs.push(h);
        }
        unreachable!("network has at least one layer")
    }

    /// Backpropagate `grad_out` to the `x` part of the input.
    fn input_grad(&self, cache: &ForwardCache, grad_out: &Array1<f64>) -> Array1<f64> {
        let mut g = grad_out.clone();
        for idx in (0..self.layers.len()).rev() {
            g = self.layers[idx].w.t().dot(&g);
            if idx > 0 {
                let z = &cache.zs[idx - 1];
                g.zip_mut_with(z, |gv, &zv| *gv *= self.activation.derivative(zv));
            }
        }
        g.slice(ndarray::s![..self.input_dim]).to_owned()
    }

    /// Backpropagate `grad_out` to all weights, accumulating into `grads`.
    fn accumulate_weight_grads(
        &self,
        cache: &ForwardCache,
        grad_out: &Array1<f64>,
        grads: &mut [Layer],
    ) {
        let mut g = grad_out.clone();
        for idx in (0..self.layers.len()).rev() {
            // dL/dW = g outer input; dL/db = g.
            let input = &cache.inputs[idx];
            for (r, gv) in g.iter().enumerate() {
                if *gv == 0.0 {
                    continue;
                }
                let mut row = grads[idx].w.row_mut(r);
                row.zip_mut_with(input, |w, &inp| *w += gv * inp);
            }
            grads[idx].b += &g;
            if idx > 0 {
                g = self.layers[idx].w.t().dot(&g);
                let z = &cache.zs[idx - 1];
                g.zip_mut_with(z, |gv, &zv| *gv *= self.activation.derivative(zv));
            }
        }
    }
}

impl ScoreModel for MlpScore {
    fn dim(&self) -> usize {
        self.input_dim
    }

    fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    fn score(&self, x: &Array1<f64>, i: usize) -> Array1<f64> {
        self.forward_cached(x, i).out
    }

    fn score_vjp(&self, x: &Array1<f64>, i: usize, v: &Array1<f64>) -> Array1<f64> {
        let cache = self.forward_cached(x, i);
        self.input_grad(&cache, v)
    }
}

/// Result of a training run.
pub struct TrainOutcome {
    pub model: MlpScore,
    /// `(iteration, mean epsilon-matching batch loss)` at the log cadence.
    pub loss_history: Vec<(usize, f64)>,
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: usize,
}

impl Adam {
    fn new(like: &[Layer]) -> Self {
        let zeros = |l: &Layer| Layer {
            w: Array2::zeros(l.w.dim()),
            b: Array1::zeros(l.b.len()),
        };
        Adam {
            m: like.iter().map(zeros).collect(),
            v: like.iter().map(zeros).collect(),
            t: 0,
        }
    }

    fn step(&mut self, layers: &mut [Layer], grads: &[Layer], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for (idx, layer) in layers.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[idx], &mut self.v[idx], &grads[idx]);
            m.w.zip_mut_with(&g.w, |mv, &gv| *mv = B1 * *mv + (1.0 - B1) * gv);
            v.w.zip_mut_with(&g.w, |vv, &gv| *vv = B2 * *vv + (1.0 - B2) * gv * gv);
            m.b.zip_mut_with(&g.b, |mv, &gv| *mv = B1 * *mv + (1.0 - B1) * gv);
            v.b.zip_mut_with(&g.b, |vv, &gv| *vv = B2 * *vv + (1.0 - B2) * gv * gv);
            ndarray::Zip::from(&mut layer.w)
                .and(&m.w)
                .and(&v.w)
                .for_each(|w, &mv, &vv| *w -= lr * (mv / c1) / ((vv / c2).sqrt() + EPS));
            ndarray::Zip::from(&mut layer.b)
                .and(&m.b)
                .and(&v.b)
                .for_each(|w, &mv, &vv| *w -= lr * (mv / c1) / ((vv / c2).sqrt() + EPS));
        }
    }
}

/// Train an MLP score network on `dataset` (one point per row) by stochastic
/// gradient descent on the epsilon-matching loss. Deterministic given `seed`.
pub fn train_dsm(
    config: &MlpConfig,
    dataset: &Array2<f64>,
    schedule: Arc<Schedule>,
    seed: u64,
) -> Result<TrainOutcome> {
    if dataset.nrows() == 0 {
        return Err(McgError::parameter("training dataset must be non-empty"));
    }
    if dataset.ncols() != config.input_dim {
        return Err(McgError::DimensionMismatch {
            expected: config.input_dim,
            got: dataset.ncols(),
            context: "train_dsm dataset width",
        });
    }
    let mut model = MlpScore::init(config, schedule.clone(), seed)?;
    let mut loss_history = Vec::new();
    if config.iterations == 0 {
        return Ok(TrainOutcome { model, loss_history });
    }
    let n = config.input_dim;
    let mut batch_rng = rng::rng_for_stream(seed, 0x11);
    let mut adam = Adam::new(&model.layers);
    let mut grads: Vec<Layer> = model
        .layers
        .iter()
        .map(|l| Layer {
            w: Array2::zeros(l.w.dim()),
            b: Array1::zeros(l.b.len()),
        })
        .collect();
    for iter in 1..=config.iterations {
        for g in grads.iter_mut() {
            g.w.fill(0.0);
            g.b.fill(0.0);
        }
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_size {
            let i = batch_rng.random_range(1..=schedule.n());
            let row = batch_rng.random_range(0..dataset.nrows());
            let x0 = dataset.row(row).to_owned();
            let z = Array1::from_iter((0..n).map(|_| batch_rng.sample::<f64, _>(StandardNormal)));
            let xi = schedule.forward_diffuse(&x0, i, &z)?;
            let b = schedule.b(i);
            let cache = model.forward_cached(&xi, i);
            // r = b s + z; loss = ||r||^2; dL/ds = 2 b r.
            let r = b * &cache.out + &z;
            batch_loss += r.dot(&r);
            let grad_out = (2.0 * b / config.batch_size as f64) * &r;
            model.accumulate_weight_grads(&cache, &grad_out, &mut grads);
        }
        batch_loss /= config.batch_size as f64;
        if !batch_loss.is_finite() {
            return Err(McgError::TrainingDivergence { iteration: iter });
        }
        adam.step(&mut model.layers, &grads, config.learning_rate);
        if iter % config.log_every.max(1) == 0 || iter == config.iterations {
            loss_history.push((iter, batch_loss));
        }
    }
    Ok(TrainOutcome { model, loss_history })
}
