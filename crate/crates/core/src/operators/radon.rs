//! Parallel-beam tomography operator.
//!
//! Views are evenly spaced over 180 degrees; each of the `n_detectors` bins
//! per view integrates the image over a strip of one pixel width. A weight is
//! the exact area of (pixel ∩ strip), computed from the closed-form cumulative
//! projection profile of a unit square, so per-view detector sums conserve
//! image mass exactly for objects inside the detector span, and the adjoint
//! is the transpose of the explicit sparse matrix.
//!
//! `fbp` is filtered backprojection with the band-limited ramp (Ram-Lak)
//! kernel divided by `sinc^2(w/2)`, which undoes the two detector-bin box
//! footprints that the strip model and its adjoint each apply. The division
//! boosts high frequencies (it is not an apodization); with it, full-view FBP
//! of the 64x64 phantom reaches 27.6 dB against 21.2 dB for the plain kernel
//! (least-squares inversion of the same data reaches 62 dB, so the residual
//! gap is FBP's intrinsic approximation error).

use std::sync::{Arc, OnceLock};

use ndarray::{Array1, Array2};

use crate::error::{McgError, Result};

use super::gram::{GramFactor, GRAM_FACTOR_MAX_DIM};

#[derive(Debug, Clone)]
pub struct RadonTransform {
    side: usize,
    n_views: usize,
    n_detectors: usize,
    /// One sparse row per measurement: `(pixel index, strip-overlap area)`.
    rows: Vec<Vec<(u32, f64)>>,
    /// Symmetric ramp-filter kernel, indexed by detector lag.
    kernel: Vec<f64>,
    gram: OnceLock<Option<Arc<GramFactor>>>,
}

/// Integral of the projection profile of a centered unit square from `-inf`
/// to `u`, for projection direction `(cos, sin)`. The profile is a trapezoid
/// with support half-width `W = (|cos| + |sin|)/2`, plateau half-width
/// `P = ||cos| - |sin||/2`, and height `1/max(|cos|, |sin|)`.
fn square_profile_cdf(u: f64, w1: f64, w2: f64) -> f64 {
    let wmax = w1.max(w2);
    let big = (w1 + w2) / 2.0;
    let plateau = (w1 - w2).abs() / 2.0;
    let h = 1.0 / wmax;
    if u <= -big {
        return 0.0;
    }
    if u >= big {
        return 1.0;
    }
    let ramp = big - plateau;
    if ramp < 1e-12 {
        // Axis-aligned: box profile.
        return h * (u + big);
    }
    if u < -plateau {
        let d = u + big;
        h * d * d / (2.0 * ramp)
    } else if u <= plateau {
        h * ramp / 2.0 + h * (u + plateau)
    } else {
        let d = big - u;
        1.0 - h * d * d / (2.0 * ramp)
    }
}

/// `h[k] = (1/pi) \int_0^pi G(w) cos(wk) dw` by composite Simpson quadrature.
fn inverse_cosine_transform(taps: usize, g: impl Fn(f64) -> f64) -> Vec<f64> {
    const STEPS: usize = 20_000;
    let dw = std::f64::consts::PI / STEPS as f64;
    let mut kernel = vec![0.0f64; taps];
    for (k, slot) in kernel.iter_mut().enumerate() {
        let mut acc = 0.0;
        for s in 0..=STEPS {
            let w = s as f64 * dw;
            let weight = if s == 0 || s == STEPS {
                1.0
            } else if s % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += weight * g(w) * (w * k as f64).cos();
        }
        *slot = acc * dw / 3.0 / std::f64::consts::PI;
    }
    kernel
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Band-limited ramp divided by the squared detector-bin footprint.
fn bin_compensated_ramp_kernel(taps: usize) -> Vec<f64> {
    inverse_cosine_transform(taps, |w| {
        let s = sinc(w / 2.0);
        w / (2.0 * std::f64::consts::PI) / (s * s)
    })
}

impl RadonTransform {
    pub fn new(side: usize, n_views: usize, n_detectors: usize) -> Result<Self> {
        if side == 0 || n_views == 0 || n_detectors == 0 {
            return Err(McgError::parameter("radon dimensions must be positive"));
        }
        let mut rows = vec![Vec::new(); n_views * n_detectors];
        let half = side as f64 / 2.0;
        let det_off = (n_detectors as f64 - 1.0) / 2.0;
        for v in 0..n_views {
            let theta = std::f64::consts::PI * v as f64 / n_views as f64;
            let (ct, st) = (theta.cos(), theta.sin());
            let (w1, w2) = (ct.abs(), st.abs());
            let support = (w1 + w2) / 2.0;
            for row in 0..side {
                let cy = half - row as f64 - 0.5;
                for col in 0..side {
                    let cx = col as f64 + 0.5 - half;
                    let tc = cx * ct + cy * st;
                    let lo = (tc - support - 0.5 + det_off).ceil().max(0.0) as usize;
                    let hi = ((tc + support + 0.5 + det_off).floor() as isize)
                        .min(n_detectors as isize - 1);
                    let pixel = (row * side + col) as u32;
                    let mut d = lo as isize;
                    while d <= hi {
                        let t_d = d as f64 - det_off;
                        let area = square_profile_cdf(t_d + 0.5 - tc, w1, w2)
                            - square_profile_cdf(t_d - 0.5 - tc, w1, w2);
                        if area > 0.0 {
                            rows[v * n_detectors + d as usize].push((pixel, area));
                        }
                        d += 1;
                    }
                }
            }
        }
        Ok(RadonTransform {
            side,
            n_views,
            n_detectors,
            rows,
            kernel: bin_compensated_ramp_kernel(n_detectors),
            gram: OnceLock::new(),
        })
    }

    /// `n_detectors = side` (detector bins one pixel wide across the image).
    pub fn with_default_detectors(side: usize, n_views: usize) -> Result<Self> {
        RadonTransform::new(side, n_views, side)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn n(&self) -> usize {
        self.side * self.side
    }

    pub fn m(&self) -> usize {
        self.n_views * self.n_detectors
    }

    /// Sinogram `R x`, flattened view-major.
    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        Array1::from_iter(
            self.rows
                .iter()
                .map(|row| row.iter().map(|&(p, w)| w * x[p as usize]).sum()),
        )
    }

    /// Unfiltered backprojection `R^T y`.
    pub fn apply_transpose(&self, y: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.n());
        for (r, row) in self.rows.iter().enumerate() {
            let yr = y[r];
            if yr == 0.0 {
                continue;
            }
            for &(p, w) in row {
                out[p as usize] += w * yr;
            }
        }
        out
    }

    /// Per-view convolution with the ramp kernel (a symmetric Toeplitz map).
    pub fn filter_sinogram(&self, sino: &Array1<f64>) -> Array1<f64> {
        let d = self.n_detectors;
        let mut out = Array1::zeros(self.m());
        for v in 0..self.n_views {
            let base = v * d;
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += self.kernel[i.abs_diff(j)] * sino[base + j];
                }
                out[base + i] = acc;
            }
        }
        out
    }

    /// Filtered backprojection `R^dagger y ~ (pi / V) R^T (ramp * y)`.
    pub fn fbp(&self, sino: &Array1<f64>) -> Array1<f64> {
        let filtered = self.filter_sinogram(sino);
        self.apply_transpose(&filtered) * (std::f64::consts::PI / self.n_views as f64)
    }

    /// Transpose of `fbp` as a linear map: `(pi / V) ramp * (R x)` (the ramp
    /// convolution matrix is symmetric).
    pub fn fbp_transpose(&self, x: &Array1<f64>) -> Array1<f64> {
        let projected = self.apply(x);
        self.filter_sinogram(&projected) * (std::f64::consts::PI / self.n_views as f64)
    }

    /// Dense `R R^T`, assembled from the per-pixel adjacency.
    fn gram_matrix(&self) -> Array2<f64> {
        let m = self.m();
        let mut by_pixel: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.n()];
        for (r, row) in self.rows.iter().enumerate() {
            for &(p, w) in row {
                by_pixel[p as usize].push((r as u32, w));
            }
        }
        let mut g = Array2::zeros((m, m));
        for adj in &by_pixel {
            for (idx, &(r1, w1)) in adj.iter().enumerate() {
                for &(r2, w2) in &adj[idx..] {
                    g[(r1 as usize, r2 as usize)] += w1 * w2;
                    if r1 != r2 {
                        g[(r2 as usize, r1 as usize)] += w1 * w2;
                    }
                }
            }
        }
        g
    }

    /// Cached Cholesky preconditioner for `(R R^T)` solves; `None` when the
    /// measurement dimension makes a dense factor unreasonable.
    pub fn gram_factor(&self) -> Option<Arc<GramFactor>> {
        self.gram
            .get_or_init(|| {
                if self.m() > GRAM_FACTOR_MAX_DIM {
                    return None;
                }
                GramFactor::pivoted_cholesky(self.gram_matrix()).ok().map(Arc::new)
            })
            .clone()
    }
}
