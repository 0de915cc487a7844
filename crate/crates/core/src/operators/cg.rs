//! Conjugate gradients on an implicit symmetric positive (semi-)definite
//! operator. Zero initial guess, relative-residual stopping rule.

use ndarray::Array1;

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` at exit (0 when `b = 0`).
    pub relative_residual: f64,
    pub converged: bool,
}

pub fn conjugate_gradient<F>(
    apply: F,
    b: &Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> (Array1<f64>, CgOutcome)
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
{
    preconditioned_conjugate_gradient(apply, |r| r.clone(), b, tol, max_iter)
}

/// CG with a symmetric positive definite preconditioner `precond ~ A^{-1}`.
pub fn preconditioned_conjugate_gradient<F, M>(
    apply: F,
    precond: M,
    b: &Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> (Array1<f64>, CgOutcome)
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
    M: Fn(&Array1<f64>) -> Array1<f64>,
{
    let n = b.len();
    let mut x = Array1::zeros(n);
    let b_norm = b.dot(b).sqrt();
    if b_norm == 0.0 {
        return (
            x,
            CgOutcome {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        );
    }
    let mut r = b.clone();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut iterations = 0;
    while iterations < max_iter {
        if r.dot(&r).sqrt() <= tol * b_norm {
            break;
        }
        let ap = apply(&p);
        let denom = p.dot(&ap);
        if denom <= 0.0 || !denom.is_finite() {
            // Left the positive cone (numerically singular); stop with what
            // we have rather than dividing by garbage.
            break;
        }
        let alpha = rz / denom;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        z = precond(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        p = &z + &(beta * &p);
        rz = rz_new;
        iterations += 1;
    }
    let relative_residual = r.dot(&r).sqrt() / b_norm;
    (
        x,
        CgOutcome {
            iterations,
            relative_residual,
            converged: relative_residual <= tol,
        },
    )
}
