//! Discrete noise schedules for the VP and VE diffusion forms.
//!
//! A schedule of length `N` fixes the forward marginal `x_i = a_i x_0 + b_i z`
//! and the coefficients of the unconditional reverse step for indices
//! `i = 1..=N`, with `i = N` the noisiest state and continuous time `t = i/N`.
//!
//! - VP: linearly increasing `beta_i`, `a_i = sqrt(alpha_bar_i)`,
//!   `b_i = sqrt(1 - alpha_bar_i)` with `alpha_bar_i = prod_{j<=i}(1 - beta_j)`.
//! - VE: geometrically increasing `sigma_i`, `a_i = 1`, `b_i = sigma_i`.
//!
//! Index 0 denotes the clean level `(a_0, b_0) = (1, 0)`; it is never part of
//! the stored arrays and is only used when offsetting measurements to the
//! level of the next iterate.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{McgError, Result};

/// Which SDE discretization a schedule realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdeKind {
    Vp,
    Ve,
}

/// Endpoint parameters of a schedule; the full arrays are re-derived on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleSpec {
    Vp {
        n: usize,
        beta_min: f64,
        beta_max: f64,
    },
    Ve {
        n: usize,
        sigma_min: f64,
        sigma_max: f64,
    },
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<Schedule> {
        match *self {
            ScheduleSpec::Vp {
                n,
                beta_min,
                beta_max,
            } => Schedule::vp(n, beta_min, beta_max),
            ScheduleSpec::Ve {
                n,
                sigma_min,
                sigma_max,
            } => Schedule::ve(n, sigma_min, sigma_max),
        }
    }

    pub fn n(&self) -> usize {
        match *self {
            ScheduleSpec::Vp { n, .. } | ScheduleSpec::Ve { n, .. } => n,
        }
    }

    /// Same endpoints, different step count. Used by NFE sweeps, which
    /// re-build the schedule rather than striding a longer one.
    pub fn with_n(&self, n: usize) -> ScheduleSpec {
        let mut s = *self;
        match &mut s {
            ScheduleSpec::Vp { n: nn, .. } | ScheduleSpec::Ve { n: nn, .. } => *nn = n,
        }
        s
    }
}

/// A discrete noise schedule. Immutable after construction; cheap to share.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    kind: SdeKind,
    n: usize,
    spec: ScheduleSpec,
    /// VP only: per-step beta, strictly increasing.
    beta: Vec<f64>,
    /// VP only: running product of (1 - beta).
    alpha_bar: Vec<f64>,
    /// VE only: noise level, strictly increasing.
    sigma: Vec<f64>,
    /// Signal coefficient a_i.
    a: Vec<f64>,
    /// Noise level b_i, strictly increasing.
    b: Vec<f64>,
}

/// Coefficients of one unconditional reverse step
/// `x_{i-1} = f(x_i, s) + g z`.
#[derive(Debug, Clone, Copy)]
pub enum ReverseCoeffs {
    /// VP ancestral: `f(x, s) = (x + (1 - alpha) s) / sqrt(alpha)`,
    /// `g = sqrt(beta (1 - alpha_bar_prev) / (1 - alpha_bar))`.
    Vp { alpha: f64, g: f64 },
    /// VE Euler-Maruyama: `f(x, s) = x + (sigma^2 - sigma_prev^2) s`,
    /// `g = sqrt(sigma^2 - sigma_prev^2)`.
    Ve { dsigma2: f64, g: f64 },
}

impl ReverseCoeffs {
    /// The deterministic part `f(x, s)`.
    pub fn deterministic(&self, x: &Array1<f64>, score: &Array1<f64>) -> Array1<f64> {
        self.x_coeff() * x + self.score_coeff() * score
    }

    /// Noise scale `g`; zero at the terminal step.
    pub fn noise_scale(&self) -> f64 {
        match *self {
            ReverseCoeffs::Vp { g, .. } | ReverseCoeffs::Ve { g, .. } => g,
        }
    }

    /// `df/dx` as a scalar multiple of the identity.
    pub fn x_coeff(&self) -> f64 {
        match *self {
            ReverseCoeffs::Vp { alpha, .. } => 1.0 / alpha.sqrt(),
            ReverseCoeffs::Ve { .. } => 1.0,
        }
    }

    /// `df/ds` as a scalar multiple of the identity.
    pub fn score_coeff(&self) -> f64 {
        match *self {
            ReverseCoeffs::Vp { alpha, .. } => (1.0 - alpha) / alpha.sqrt(),
            ReverseCoeffs::Ve { dsigma2, .. } => dsigma2,
        }
    }
}

impl Schedule {
    /// VP schedule with `beta` linearly interpolated from `beta_min` to
    /// `beta_max` over `i = 1..=n` (endpoints inclusive).
    pub fn vp(n: usize, beta_min: f64, beta_max: f64) -> Result<Schedule> {
        if n < 2 {
            return Err(McgError::parameter(format!("VP schedule needs n >= 2, got {n}")));
        }
        // A constant schedule (beta_min == beta_max) is permitted; it is the
        // two-term-product degenerate case.
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(McgError::parameter(format!(
                "VP schedule needs 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
            )));
        }
        let mut beta = Vec::with_capacity(n);
        let mut alpha_bar = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut prod = 1.0;
        for i in 0..n {
            let bi = beta_min + (beta_max - beta_min) * i as f64 / (n - 1) as f64;
            prod *= 1.0 - bi;
            beta.push(bi);
            alpha_bar.push(prod);
            a.push(prod.sqrt());
            b.push((1.0 - prod).sqrt());
        }
        Ok(Schedule {
            kind: SdeKind::Vp,
            n,
            spec: ScheduleSpec::Vp {
                n,
                beta_min,
                beta_max,
            },
            beta,
            alpha_bar,
            sigma: Vec::new(),
            a,
            b,
        })
    }

    /// VE schedule with `sigma_i = sigma_min (sigma_max/sigma_min)^{(i-1)/(n-1)}`.
    pub fn ve(n: usize, sigma_min: f64, sigma_max: f64) -> Result<Schedule> {
        if n < 2 {
            return Err(McgError::parameter(format!("VE schedule needs n >= 2, got {n}")));
        }
        if !(sigma_min > 0.0 && sigma_min < sigma_max) {
            return Err(McgError::parameter(format!(
                "VE schedule needs 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
            )));
        }
        let ratio = sigma_max / sigma_min;
        let mut sigma = Vec::with_capacity(n);
        for i in 0..n {
            sigma.push(sigma_min * ratio.powf(i as f64 / (n - 1) as f64));
        }
        // Pin the endpoints exactly; powf can be off by an ulp.
        sigma[0] = sigma_min;
        sigma[n - 1] = sigma_max;
        let a = vec![1.0; n];
        let b = sigma.clone();
        Ok(Schedule {
            kind: SdeKind::Ve,
            n,
            spec: ScheduleSpec::Ve {
                n,
                sigma_min,
                sigma_max,
            },
            beta: Vec::new(),
            alpha_bar: Vec::new(),
            sigma,
            a,
            b,
        })
    }

    pub fn kind(&self) -> SdeKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < 1 || i > self.n {
            return Err(McgError::StepIndex { index: i, n: self.n });
        }
        Ok(())
    }

    /// Signal coefficient `a_i`, `i` in `1..=N`.
    pub fn a(&self, i: usize) -> f64 {
        self.a[i - 1]
    }

    /// Noise level `b_i`, `i` in `1..=N`.
    pub fn b(&self, i: usize) -> f64 {
        self.b[i - 1]
    }

    /// VP per-step `beta_i`. Panics for VE schedules.
    pub fn beta(&self, i: usize) -> f64 {
        self.beta[i - 1]
    }

    /// VP `alpha_bar_i`. Panics for VE schedules.
    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bar[i - 1]
    }

    /// VE `sigma_i`. Panics for VP schedules.
    pub fn sigma(&self, i: usize) -> f64 {
        self.sigma[i - 1]
    }

    /// `(a_i, b_i)` extended to level 0: `(1, 0)` for both kinds.
    pub fn level_coeffs(&self, i: usize) -> (f64, f64) {
        if i == 0 {
            (1.0, 0.0)
        } else {
            (self.a[i - 1], self.b[i - 1])
        }
    }

    /// One forward-diffusion draw `a_i x0 + b_i noise`.
    pub fn forward_diffuse(
        &self,
        x0: &Array1<f64>,
        i: usize,
        noise: &Array1<f64>,
    ) -> Result<Array1<f64>> {
        self.check_index(i)?;
        if x0.len() != noise.len() {
            return Err(McgError::DimensionMismatch {
                expected: x0.len(),
                got: noise.len(),
                context: "forward_diffuse noise",
            });
        }
        Ok(self.a(i) * x0 + self.b(i) * noise)
    }

    /// Coefficients of the reverse step taking level `i` to `i - 1`.
    ///
    /// At `i = 1` the noise scale is zero: the VP posterior variance vanishes
    /// because `alpha_bar_0 = 1`, and VE uses `sigma_0 = 0`, so the last
    /// reverse step is deterministic for both kinds.
    pub fn reverse_coeffs(&self, i: usize) -> Result<ReverseCoeffs> {
        self.check_index(i)?;
        match self.kind {
            SdeKind::Vp => {
                let alpha = 1.0 - self.beta(i);
                let ab_prev = if i >= 2 { self.alpha_bar(i - 1) } else { 1.0 };
                let var = self.beta(i) * (1.0 - ab_prev) / (1.0 - self.alpha_bar(i));
                Ok(ReverseCoeffs::Vp {
                    alpha,
                    g: var.sqrt(),
                })
            }
            SdeKind::Ve => {
                let s_prev = if i >= 2 { self.sigma(i - 1) } else { 0.0 };
                let dsigma2 = self.sigma(i) * self.sigma(i) - s_prev * s_prev;
                // The terminal step keeps the sigma_1^2 drift (a final
                // denoising push toward the clean level) but adds no noise.
                let g = if i == 1 { 0.0 } else { dsigma2.max(0.0).sqrt() };
                Ok(ReverseCoeffs::Ve { dsigma2, g })
            }
        }
    }

    /// Score -> epsilon prediction at level `i`: `eps = -b_i s`.
    pub fn score_to_epsilon(&self, score: &Array1<f64>, i: usize) -> Array1<f64> {
        -self.b(i) * score
    }

    /// Epsilon prediction -> score at level `i`: `s = -eps / b_i`.
    pub fn epsilon_to_score(&self, eps: &Array1<f64>, i: usize) -> Array1<f64> {
        -eps / self.b(i)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.spec).expect("schedule spec serializes")
    }

    pub fn from_toml_str(s: &str) -> Result<Schedule> {
        let spec: ScheduleSpec =
            toml::from_str(s).map_err(|e| McgError::Parse(format!("schedule: {e}")))?;
        spec.build()
    }
}

/// Default VE `sigma_max`: the maximum pairwise distance in the training set.
pub fn ve_sigma_max_from_data(rows: &ndarray::Array2<f64>) -> f64 {
    let k = rows.nrows();
    let mut best = 0.0f64;
    for i in 0..k {
        for j in (i + 1)..k {
            let d = (&rows.row(i) - &rows.row(j)).mapv(|v| v * v).sum().sqrt();
            best = best.max(d);
        }
    }
    best
}
