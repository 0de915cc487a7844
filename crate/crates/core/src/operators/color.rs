//! Channel-coupling (colorization) operator `C = P M`.
//!
//! `M` applies a fixed 3x3 orthogonal matrix across the channels of every
//! pixel, and `P` keeps one mixed channel per pixel. With the default
//! luminance-first mixing, the measurement is the gray image and the two
//! discarded mixed channels carry the chroma. Signals are planar
//! (channel-major): `x[c * n_pixels + p]`.

use ndarray::Array1;

use crate::error::{McgError, Result};

#[derive(Debug, Clone)]
pub struct ColorCoupling {
    n_pixels: usize,
    /// Row-orthonormal 3x3 mixing matrix.
    mixing: [[f64; 3]; 3],
    kept_channel: usize,
}

impl ColorCoupling {
    pub fn new(n_pixels: usize, mixing: [[f64; 3]; 3], kept_channel: usize) -> Result<Self> {
        if n_pixels == 0 {
            return Err(McgError::parameter("n_pixels must be positive"));
        }
        if kept_channel >= 3 {
            return Err(McgError::parameter("kept channel must be 0, 1, or 2"));
        }
        for r in 0..3 {
            for c in 0..3 {
                let dot: f64 = (0..3).map(|k| mixing[r][k] * mixing[c][k]).sum();
                let want = if r == c { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-12 {
                    return Err(McgError::parameter(format!(
                        "mixing matrix rows not orthonormal: <{r},{c}> = {dot}"
                    )));
                }
            }
        }
        Ok(ColorCoupling {
            n_pixels,
            mixing,
            kept_channel,
        })
    }

    /// Luminance-first orthonormal mixing: rows `(1,1,1)/sqrt(3)`,
    /// `(1,0,-1)/sqrt(2)`, `(1,-2,1)/sqrt(6)`; the gray measurement keeps
    /// the first mixed channel.
    pub fn luminance(n_pixels: usize) -> Result<Self> {
        let s3 = 3f64.sqrt();
        let s2 = 2f64.sqrt();
        let s6 = 6f64.sqrt();
        let mixing = [
            [1.0 / s3, 1.0 / s3, 1.0 / s3],
            [1.0 / s2, 0.0, -1.0 / s2],
            [1.0 / s6, -2.0 / s6, 1.0 / s6],
        ];
        ColorCoupling::new(n_pixels, mixing, 0)
    }

    pub fn n(&self) -> usize {
        3 * self.n_pixels
    }

    pub fn m(&self) -> usize {
        self.n_pixels
    }

    pub fn mixing(&self) -> &[[f64; 3]; 3] {
        &self.mixing
    }

    pub fn kept_channel(&self) -> usize {
        self.kept_channel
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        let np = self.n_pixels;
        let row = &self.mixing[self.kept_channel];
        Array1::from_shape_fn(np, |p| {
            row[0] * x[p] + row[1] * x[np + p] + row[2] * x[2 * np + p]
        })
    }

    pub fn apply_transpose(&self, y: &Array1<f64>) -> Array1<f64> {
        let np = self.n_pixels;
        let row = &self.mixing[self.kept_channel];
        let mut out = Array1::zeros(3 * np);
        for p in 0..np {
            for c in 0..3 {
                out[c * np + p] = row[c] * y[p];
            }
        }
        out
    }
}
