//! Desk-scale test data: tomography phantoms, toy point clouds, and linear
//! subspace patches.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::rng;
use crate::score::GaussianSubspaceScore;

/// One ellipse of an analytic phantom: additive intensity, semi-axes,
/// center, and rotation, all in `[-1, 1]^2` coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub intensity: f64,
    pub semi_a: f64,
    pub semi_b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi_deg: f64,
}

/// Which intensity set the Shepp-Logan phantom uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SheppLoganVariant {
    /// Original low-contrast intensities.
    Classical,
    /// High-contrast variant common in image-processing demos.
    Modified,
}

/// The ten-ellipse Shepp-Logan parameterization.
pub fn shepp_logan_ellipses(variant: SheppLoganVariant) -> Vec<Ellipse> {
    let intensities: [f64; 10] = match variant {
        SheppLoganVariant::Classical => {
            [1.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01]
        }
        SheppLoganVariant::Modified => [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
    };
    let geom: [(f64, f64, f64, f64, f64); 10] = [
        (0.69, 0.92, 0.0, 0.0, 0.0),
        (0.6624, 0.874, 0.0, -0.0184, 0.0),
        (0.11, 0.31, 0.22, 0.0, -18.0),
        (0.16, 0.41, -0.22, 0.0, 18.0),
        (0.21, 0.25, 0.0, 0.35, 0.0),
        (0.046, 0.046, 0.0, 0.1, 0.0),
        (0.046, 0.046, 0.0, -0.1, 0.0),
        (0.046, 0.023, -0.08, -0.605, 0.0),
        (0.023, 0.023, 0.0, -0.606, 0.0),
        (0.023, 0.046, 0.06, -0.605, 0.0),
    ];
    intensities
        .iter()
        .zip(geom.iter())
        .map(|(&intensity, &(semi_a, semi_b, x0, y0, phi_deg))| Ellipse {
            intensity,
            semi_a,
            semi_b,
            x0,
            y0,
            phi_deg,
        })
        .collect()
}

/// Rasterize additive ellipses onto a `size x size` grid over `[-1, 1]^2`.
/// Each pixel is the mean over a 4x4 subsample (area sampling), so edge
/// pixels carry fractional coverage rather than aliased hard steps.
pub fn rasterize_ellipses(size: usize, ellipses: &[Ellipse]) -> Array2<f64> {
    const SS: usize = 4;
    let mut img = Array2::zeros((size, size));
    let trig: Vec<(f64, f64)> = ellipses
        .iter()
        .map(|e| {
            let phi = e.phi_deg.to_radians();
            (phi.cos(), phi.sin())
        })
        .collect();
    for row in 0..size {
        for col in 0..size {
            let mut v = 0.0;
            for sy in 0..SS {
                let y = (size as f64
                    - 2.0 * (row as f64 + (sy as f64 + 0.5) / SS as f64))
                    / size as f64;
                for sx in 0..SS {
                    let x = (2.0 * (col as f64 + (sx as f64 + 0.5) / SS as f64)
                        - size as f64)
                        / size as f64;
                    for (e, &(ct, st)) in ellipses.iter().zip(trig.iter()) {
                        let dx = x - e.x0;
                        let dy = y - e.y0;
                        let u = (dx * ct + dy * st) / e.semi_a;
                        let w = (-dx * st + dy * ct) / e.semi_b;
                        if u * u + w * w <= 1.0 {
                            v += e.intensity;
                        }
                    }
                }
            }
            img[(row, col)] = v / (SS * SS) as f64;
        }
    }
    img
}

/// The Shepp-Logan phantom; values lie in `[0, 1]` with background exactly 0.
pub fn shepp_logan(size: usize, variant: SheppLoganVariant) -> Array2<f64> {
    rasterize_ellipses(size, &shepp_logan_ellipses(variant))
}

/// A random lesion phantom sharing the Shepp-Logan skull and interior, with
/// 2-5 random small features. Used as training data for tomography priors.
pub fn random_ellipse_phantom(size: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng::rng_for_stream(seed, 0x20);
    let base = shepp_logan_ellipses(SheppLoganVariant::Classical);
    let mut ellipses = vec![base[0], base[1]];
    let count = rng.random_range(2..=5);
    for _ in 0..count {
        let r = 0.55 * rng.random::<f64>().sqrt();
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        ellipses.push(Ellipse {
            intensity: rng.random_range(0.005..0.03),
            semi_a: rng.random_range(0.03..0.18),
            semi_b: rng.random_range(0.03..0.18),
            x0: r * theta.cos(),
            y0: -0.0184 + 0.8 * r * theta.sin(),
            phi_deg: rng.random_range(0.0..180.0),
        });
    }
    rasterize_ellipses(size, &ellipses)
}

/// A random RGB ellipse image in planar layout (`3 * size^2`), for the
/// colorization task. Each ellipse adds its own color; values stay in
/// `[0, 1]`.
pub fn color_ellipse_phantom(size: usize, seed: u64) -> Array1<f64> {
    let mut rng = rng::rng_for_stream(seed, 0x23);
    let count = rng.random_range(3..=6);
    let mut channels: Vec<Vec<Ellipse>> = vec![Vec::new(), Vec::new(), Vec::new()];
    for _ in 0..count {
        let r = 0.7 * rng.random::<f64>().sqrt();
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let shape = (
            rng.random_range(0.08..0.35),
            rng.random_range(0.08..0.35),
            r * theta.cos(),
            r * theta.sin(),
            rng.random_range(0.0..180.0),
        );
        for ch in channels.iter_mut() {
            ch.push(Ellipse {
                intensity: rng.random_range(0.05..0.3),
                semi_a: shape.0,
                semi_b: shape.1,
                x0: shape.2,
                y0: shape.3,
                phi_deg: shape.4,
            });
        }
    }
    let mut out = Array1::zeros(3 * size * size);
    for (c, ellipses) in channels.iter().enumerate() {
        let img = rasterize_ellipses(size, ellipses);
        for (p, &v) in img.iter().enumerate() {
            out[c * size * size + p] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// `count x 2` samples from eight Gaussian blobs of std 0.1 centered on a
/// circle of radius 2.
pub fn eight_gaussians_2d(count: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng::rng_for_stream(seed, 0x21);
    let mut out = Array2::zeros((count, 2));
    for k in 0..count {
        let mode = rng.random_range(0..8) as f64;
        let angle = mode * std::f64::consts::FRAC_PI_4;
        out[(k, 0)] = 2.0 * angle.cos() + 0.1 * rng.sample::<f64, _>(StandardNormal);
        out[(k, 1)] = 2.0 * angle.sin() + 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

/// Points on an `l`-dimensional linear patch of `R^n` with their basis.
pub struct SubspacePatch {
    /// `count x n`, every row exactly in `offset + range(basis)`.
    pub points: Array2<f64>,
    /// `n x l` column-orthonormal.
    pub basis: Array2<f64>,
    pub offset: Array1<f64>,
}

/// Uniform draws from an axis-aligned box of half-width `5 tau` in tangent
/// coordinates of a random `l`-dimensional subspace.
pub fn subspace_patch(n: usize, l: usize, count: usize, tau: f64, seed: u64) -> Result<SubspacePatch> {
    let mut rng = rng::rng_for_stream(seed, 0x22);
    let raw = Array2::from_shape_fn((n, l), |_| rng.sample::<f64, _>(StandardNormal));
    let basis = crate::score::orthonormalize(raw)?;
    let offset = Array1::zeros(n);
    let mut points = Array2::zeros((count, n));
    for k in 0..count {
        let c = Array1::from_iter((0..l).map(|_| rng.random_range(-5.0 * tau..5.0 * tau)));
        let p = &offset + &basis.dot(&c);
        points.row_mut(k).assign(&p);
    }
    Ok(SubspacePatch {
        points,
        basis,
        offset,
    })
}

impl SubspacePatch {
    /// Gaussian-subspace oracle with tangent variance `tau^2` on this patch.
    pub fn oracle(
        &self,
        schedule: std::sync::Arc<crate::schedule::Schedule>,
        tau: f64,
    ) -> Result<GaussianSubspaceScore> {
        GaussianSubspaceScore::new(schedule, self.offset.clone(), self.basis.clone(), tau * tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shepp_logan_values_in_unit_range_background_zero() {
        let img = shepp_logan(64, SheppLoganVariant::Classical);
        let mut max = f64::NEG_INFINITY;
        let mut min = f64::INFINITY;
        for &v in img.iter() {
            max = max.max(v);
            min = min.min(v);
        }
        assert!(min >= 0.0, "min {min}");
        assert!(max <= 1.0, "max {max}");
        // Corners are outside the skull ellipse.
        assert_eq!(img[(0, 0)], 0.0);
        assert_eq!(img[(0, 63)], 0.0);
        assert_eq!(img[(63, 0)], 0.0);
        // The skull rim approaches full intensity and the interior is faint.
        assert!(max > 0.9);
        assert!(img[(32, 32)] > 0.0 && img[(32, 32)] < 0.1);
    }

    #[test]
    fn modified_variant_has_higher_contrast() {
        let classical = shepp_logan(32, SheppLoganVariant::Classical);
        let modified = shepp_logan(32, SheppLoganVariant::Modified);
        assert!(modified[(16, 16)] > classical[(16, 16)]);
    }

    #[test]
    fn eight_gaussians_reproducible_and_near_circle() {
        let a = eight_gaussians_2d(100, 9);
        let b = eight_gaussians_2d(100, 9);
        assert_eq!(a, b);
        for row in a.rows() {
            let r = (row[0] * row[0] + row[1] * row[1]).sqrt();
            assert!((r - 2.0).abs() < 1.0, "point too far from circle: r={r}");
        }
    }

    #[test]
    fn subspace_patch_points_lie_in_subspace() {
        let patch = subspace_patch(50, 5, 20, 1.0, 3).unwrap();
        for row in patch.points.rows() {
            let v = row.to_owned() - &patch.offset;
            let tangent = patch.basis.dot(&patch.basis.t().dot(&v));
            let normal = &v - &tangent;
            let norm = normal.dot(&normal).sqrt();
            assert!(norm <= 1e-12, "normal norm {norm}");
        }
    }

    #[test]
    fn random_phantoms_differ_across_seeds() {
        let a = random_ellipse_phantom(32, 1);
        let b = random_ellipse_phantom(32, 2);
        assert_ne!(a, b);
        for &v in a.iter() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
