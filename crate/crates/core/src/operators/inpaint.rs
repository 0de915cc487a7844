//! Coordinate-selection (inpainting) operator.
//!
//! `P` keeps a sorted set of `m` distinct coordinates of an `n`-vector; its
//! rows are standard basis vectors, so `P P^T = I_m` and `I - P^T P` zeroes
//! the kept coordinates.

use ndarray::Array1;

use crate::error::{McgError, Result};

#[derive(Debug, Clone)]
pub struct InpaintingMask {
    n: usize,
    /// Sorted, distinct, 0-based kept coordinates.
    kept: Vec<usize>,
}

impl InpaintingMask {
    pub fn new(n: usize, mut kept: Vec<usize>) -> Result<Self> {
        if kept.is_empty() {
            return Err(McgError::parameter("mask must keep at least one index"));
        }
        kept.sort_unstable();
        kept.dedup();
        if let Some(&max) = kept.last() {
            if max >= n {
                return Err(McgError::parameter(format!(
                    "kept index {max} out of range for n = {n}"
                )));
            }
        }
        Ok(InpaintingMask { n, kept })
    }

    /// Keeps every coordinate (full observation).
    pub fn identity(n: usize) -> Result<Self> {
        InpaintingMask::new(n, (0..n).collect())
    }

    /// Mask for an `height x width x channels` planar image hiding the box
    /// with corner `(x0, y0)` and size `bw x bh` in every channel.
    pub fn hide_box(
        height: usize,
        width: usize,
        channels: usize,
        x0: usize,
        y0: usize,
        bw: usize,
        bh: usize,
    ) -> Result<Self> {
        if x0 + bw > width || y0 + bh > height {
            return Err(McgError::parameter("box exceeds image bounds"));
        }
        let plane = height * width;
        let mut kept = Vec::new();
        for c in 0..channels {
            for row in 0..height {
                for col in 0..width {
                    let inside = col >= x0 && col < x0 + bw && row >= y0 && row < y0 + bh;
                    if !inside {
                        kept.push(c * plane + row * width + col);
                    }
                }
            }
        }
        InpaintingMask::new(plane * channels, kept)
    }

    /// Mask hiding a contiguous block `[start, start + len)` of a vector.
    pub fn hide_block(n: usize, start: usize, len: usize) -> Result<Self> {
        if start + len > n {
            return Err(McgError::parameter("block exceeds vector bounds"));
        }
        let kept = (0..n).filter(|&j| j < start || j >= start + len).collect();
        InpaintingMask::new(n, kept)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.kept.len()
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        Array1::from_iter(self.kept.iter().map(|&j| x[j]))
    }

    pub fn apply_transpose(&self, y: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.n);
        for (r, &j) in self.kept.iter().enumerate() {
            out[j] = y[r];
        }
        out
    }
}
