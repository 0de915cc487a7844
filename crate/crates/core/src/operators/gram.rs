//! Rank-revealing factor of the measurement Gram matrix `H H^T`.
//!
//! Tomography Grams are numerically rank-deficient: every view's rows sum to
//! the same mass functional, so `H H^T` carries a cluster of near-null
//! directions that stall unpreconditioned conjugate gradients three orders of
//! magnitude above the consistency tolerance. A diagonally pivoted Cholesky
//! factorization `H H^T ~ L L^T` truncated at a relative pivot cutoff gives
//! the minimum-norm least-squares solve
//!
//! ```text
//! (H H^T)^† b = L (L^T L)^{-2} L^T b,
//! ```
//!
//! which is exact on the retained range and returns zero along null
//! directions. Noised consistency targets are generally infeasible (their
//! measurement noise has components outside `range(H)`); `L^T` annihilates
//! that part, so the solve neither stalls on it nor injects it into the
//! image, and the consistency projection built on top is idempotent.

use ndarray::{Array1, Array2};

use crate::error::{McgError, Result};

/// Grams larger than this are not factored (the factor stores an `m x rank`
/// matrix); consistency falls back to plain conjugate gradients.
pub const GRAM_FACTOR_MAX_DIM: usize = 4096;

/// Pivots below this fraction of the first pivot are treated as null.
pub const GRAM_PIVOT_CUTOFF_REL: f64 = 1e-11;

/// Limiting relative accuracy of the truncated solve on the retained range
/// (the retained spectrum spans up to 1/GRAM_PIVOT_CUTOFF_REL, so a direct
/// solve cannot do much better even with column equilibration).
pub const GRAM_RANGE_TOL: f64 = 1e-6;

#[derive(Debug)]
pub struct GramFactor {
    dim: usize,
    rank: usize,
    /// `perm[k]` = original index of pivoted position `k`.
    perm: Vec<usize>,
    /// Full `dim x rank` factor, row-major, rows in pivoted order.
    l: Vec<f64>,
    /// Column norms of `l`; the equilibration that keeps the inner solve
    /// well-conditioned.
    col_norms: Vec<f64>,
    /// Lower-triangular Cholesky factor of the column-equilibrated
    /// `D^{-1} L^T L D^{-1}`, `rank x rank` row-major.
    g: Vec<f64>,
}

/// Plain (unpivoted) Cholesky of an SPD matrix in place; returns the lower
/// triangle row-major.
fn cholesky_lower(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 {
            return Err(McgError::parameter(format!(
                "matrix not positive definite at pivot {j}"
            )));
        }
        let diag = d.sqrt();
        a[j * n + j] = diag;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / diag;
        }
    }
    // Zero the strict upper triangle so the buffer is exactly L.
    for r in 0..n {
        for c in (r + 1)..n {
            a[r * n + c] = 0.0;
        }
    }
    Ok(())
}

fn forward_back_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

impl GramFactor {
    /// Diagonally pivoted Cholesky of `gram`, truncated at the pivot cutoff.
    pub fn pivoted_cholesky(gram: Array2<f64>) -> Result<Self> {
        let m = gram.nrows();
        if gram.ncols() != m {
            return Err(McgError::parameter("gram matrix must be square"));
        }
        let mut a: Vec<f64> = gram.iter().cloned().collect();
        let mut l = vec![0.0f64; m * m];
        let mut perm: Vec<usize> = (0..m).collect();
        let mut diag: Vec<f64> = (0..m).map(|i| a[i * m + i]).collect();
        let mut rank = 0usize;
        let mut first_pivot = None;
        for k in 0..m {
            let (j, &piv) = diag[k..]
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(y.1))
                .map(|(off, v)| (k + off, v))
                .expect("non-empty tail");
            let cutoff = match first_pivot {
                None => {
                    if piv <= 0.0 {
                        return Err(McgError::parameter("gram matrix has no positive pivot"));
                    }
                    first_pivot = Some(piv);
                    0.0
                }
                Some(p0) => GRAM_PIVOT_CUTOFF_REL * p0,
            };
            if piv <= cutoff {
                break;
            }
            if j != k {
                for c in 0..m {
                    a.swap(k * m + c, j * m + c);
                }
                for r in 0..m {
                    a.swap(r * m + k, r * m + j);
                }
                for c in 0..k {
                    l.swap(k * m + c, j * m + c);
                }
                perm.swap(k, j);
                diag.swap(k, j);
            }
            let lkk = piv.sqrt();
            l[k * m + k] = lkk;
            let (head, tail) = l.split_at_mut((k + 1) * m);
            let row_k = &head[k * m..k * m + k];
            for i in (k + 1)..m {
                let off = (i - k - 1) * m;
                let row_i = &tail[off..off + k];
                let dot: f64 = row_i.iter().zip(row_k.iter()).map(|(x, y)| x * y).sum();
                let lik = (a[i * m + k] - dot) / lkk;
                tail[off + k] = lik;
                diag[i] -= lik * lik;
            }
            rank = k + 1;
        }
        // Compact to dim x rank.
        let mut compact = vec![0.0f64; m * rank];
        for r in 0..m {
            compact[r * rank..(r + 1) * rank]
                .copy_from_slice(&l[r * m..r * m + rank]);
        }
        // G = L^T L, then column-equilibrate before factoring: the raw G has
        // condition ~ 1/cutoff^2 while the equilibrated one stays modest.
        let mut g = vec![0.0f64; rank * rank];
        for r in 0..m {
            let row = &compact[r * rank..(r + 1) * rank];
            for i in 0..rank {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..=i {
                    g[i * rank + j] += row[i] * row[j];
                }
            }
        }
        let col_norms: Vec<f64> = (0..rank).map(|i| g[i * rank + i].sqrt()).collect();
        for i in 0..rank {
            for j in 0..=i {
                g[i * rank + j] /= col_norms[i] * col_norms[j];
                g[j * rank + i] = g[i * rank + j];
            }
        }
        cholesky_lower(&mut g, rank)?;
        Ok(GramFactor {
            dim: m,
            rank,
            perm,
            l: compact,
            col_norms,
            g,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `L^T b` in pivoted order: the retained-range coordinates of `b`.
    /// Zero exactly when `b` is orthogonal to the retained range.
    pub fn range_coordinates(&self, b: &Array1<f64>) -> Array1<f64> {
        let r = self.rank;
        let mut t = Array1::zeros(r);
        for (k, &orig) in self.perm.iter().enumerate() {
            let bv = b[orig];
            if bv == 0.0 {
                continue;
            }
            let row = &self.l[k * r..(k + 1) * r];
            for (ti, &lv) in t.iter_mut().zip(row.iter()) {
                *ti += lv * bv;
            }
        }
        t
    }

    /// Minimum-norm least-squares solve `(H H^T)^† b`. In equilibrated form
    /// `Lhat = L D^{-1}`: `u = Lhat Ghat^{-1} D^{-2} Ghat^{-1} Lhat^T b`,
    /// so the spectral spread sits in the exact diagonal `D^{-2}` rather
    /// than in the factored solves.
    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let r = self.rank;
        let mut w = self.range_coordinates(b).to_vec();
        for (wi, d) in w.iter_mut().zip(self.col_norms.iter()) {
            *wi /= d;
        }
        forward_back_solve(&self.g, r, &mut w);
        for (wi, d) in w.iter_mut().zip(self.col_norms.iter()) {
            *wi /= d * d;
        }
        forward_back_solve(&self.g, r, &mut w);
        for (wi, d) in w.iter_mut().zip(self.col_norms.iter()) {
            *wi /= d;
        }
        let mut out = Array1::zeros(self.dim);
        for (k, &orig) in self.perm.iter().enumerate() {
            let row = &self.l[k * r..(k + 1) * r];
            out[orig] = row.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn factors_and_solves_spd_system() {
        let g = array![[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let f = GramFactor::pivoted_cholesky(g.clone()).unwrap();
        assert_eq!(f.rank(), 3);
        let b = array![1.0, -2.0, 0.5];
        let x = f.solve(&b);
        let r = &b - &g.dot(&x);
        assert!(r.dot(&r).sqrt() < 1e-9, "residual {:?}", r);
    }

    #[test]
    fn truncates_singular_gram_and_solves_on_range() {
        // Rank-2 gram of a 3x4 matrix with a repeated row.
        let h = array![
            [1.0, 0.0, 2.0, 0.0],
            [1.0, 0.0, 2.0, 0.0],
            [0.0, 1.0, 0.0, 1.0]
        ];
        let g = h.dot(&h.t());
        let f = GramFactor::pivoted_cholesky(g.clone()).unwrap();
        assert_eq!(f.rank(), 2);
        // Consistent right-hand side solves exactly.
        let b = g.dot(&array![0.3, -0.2, 0.9]);
        let u = f.solve(&b);
        let r = &b - &g.dot(&u);
        assert!(r.dot(&r).sqrt() < 1e-10);
        // Purely infeasible right-hand side maps to (numerically) zero: it is
        // orthogonal to the retained range.
        let b_o = array![1.0, -1.0, 0.0];
        let u = f.solve(&b_o);
        assert!(u.dot(&u).sqrt() < 1e-12, "{u:?}");
        assert!(f.range_coordinates(&b_o).dot(&f.range_coordinates(&b_o)).sqrt() < 1e-12);
        // Mixed right-hand side: the solve recovers the feasible part only.
        let mixed = &b + &b_o;
        let u = f.solve(&mixed);
        let r = &b - &g.dot(&u);
        assert!(r.dot(&r).sqrt() < 1e-10);
    }

    #[test]
    fn rejects_negative_matrix() {
        let g = array![[-1.0, 0.0], [0.0, -2.0]];
        assert!(GramFactor::pivoted_cholesky(g).is_err());
    }
}
