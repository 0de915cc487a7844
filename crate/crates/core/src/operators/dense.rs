//! Dense matrix operator, mainly for small custom problems and tests.

use std::sync::{Arc, OnceLock};

use ndarray::{Array1, Array2};

use crate::error::{McgError, Result};

use super::gram::{GramFactor, GRAM_FACTOR_MAX_DIM};

#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: Array2<f64>,
    gram: OnceLock<Option<Arc<GramFactor>>>,
}

impl DenseOperator {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(McgError::parameter("dense operator must be non-empty"));
        }
        Ok(DenseOperator {
            matrix,
            gram: OnceLock::new(),
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        DenseOperator::new(Array2::eye(n))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        self.matrix.dot(x)
    }

    pub fn apply_transpose(&self, y: &Array1<f64>) -> Array1<f64> {
        self.matrix.t().dot(y)
    }

    /// Cached Cholesky preconditioner for `(H H^T)` solves.
    pub fn gram_factor(&self) -> Option<Arc<GramFactor>> {
        self.gram
            .get_or_init(|| {
                if self.m() > GRAM_FACTOR_MAX_DIM {
                    return None;
                }
                let g = self.matrix.dot(&self.matrix.t());
                GramFactor::pivoted_cholesky(g).ok().map(Arc::new)
            })
            .clone()
    }
}
