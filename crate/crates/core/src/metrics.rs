//! Reconstruction quality metrics.
//!
//! PSNR uses peak 1.0 and reports `f64::INFINITY` on exact recovery. SSIM
//! uses the standard constants `C1 = (0.01 peak)^2`, `C2 = (0.03 peak)^2`
//! with a uniform sliding window of side `min(8, h, w)`, averaged over
//! channels of planar images.

use ndarray::Array1;

pub const SSIM_WINDOW: usize = 8;

/// Mean squared error.
pub fn mse(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    (a - b).mapv(|v| v * v).sum() / a.len() as f64
}

/// `10 log10(peak^2 / mse)` with peak 1.0; infinite for zero error.
pub fn psnr_db(mse_value: f64) -> f64 {
    if mse_value <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse_value).log10()
    }
}

/// Mean squared measurement-consistency error `||y - H xhat||^2 / m`.
pub fn mse_mc(y: &Array1<f64>, h_xhat: &Array1<f64>) -> f64 {
    mse(y, h_xhat)
}

/// SSIM over a planar `(channels, height, width)` signal layout.
pub fn ssim(a: &Array1<f64>, b: &Array1<f64>, height: usize, width: usize, channels: usize) -> f64 {
    assert_eq!(a.len(), height * width * channels);
    assert_eq!(a.len(), b.len());
    let peak = 1.0f64;
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let win = SSIM_WINDOW.min(height).min(width);
    let area = (win * win) as f64;
    let plane = height * width;
    let mut acc = 0.0;
    let mut count = 0usize;
    for c in 0..channels {
        let pa = &a.as_slice().unwrap()[c * plane..(c + 1) * plane];
        let pb = &b.as_slice().unwrap()[c * plane..(c + 1) * plane];
        for row in 0..=(height - win) {
            for col in 0..=(width - win) {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for r in row..row + win {
                    for cc in col..col + win {
                        let (va, vb) = (pa[r * width + cc], pb[r * width + cc]);
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                let (ma, mb) = (sa / area, sb / area);
                let va = saa / area - ma * ma;
                let vb = sbb / area - mb * mb;
                let cov = sab / area - ma * mb;
                let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                acc += s;
                count += 1;
            }
        }
    }
    acc / count as f64
}

/// One-sided binomial tail `P(Bin(n, 1/2) >= wins)`, the paired sign-test
/// p-value for "method A beats method B".
pub fn sign_test_p_value(wins: usize, n: usize) -> f64 {
    // Exact summation in log space; n stays small (tens of seeds).
    let mut p = 0.0f64;
    for k in wins..=n {
        let mut log_c = 0.0f64;
        for j in 0..k {
            log_c += ((n - j) as f64).ln() - ((j + 1) as f64).ln();
        }
        p += (log_c - n as f64 * 2f64.ln()).exp();
    }
    p.min(1.0)
}
