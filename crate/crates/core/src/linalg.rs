//! Dense Cholesky factorization with pivot reporting.
//!
//! The factor is stored row-major so that both the factorization inner loop
//! and forward substitution run over contiguous slices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    // row-major, only the lower triangle is meaningful
    l: Vec<f64>,
}

impl Cholesky {
    /// Factorizes a symmetric positive-definite matrix. Only the lower
    /// triangle of `a` is read.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        Self::with_jitter(a, 0.0)
    }

    /// Factorizes `a + jitter * I`.
    pub fn with_jitter(a: &DMatrix<f64>, jitter: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (row_i, row_j) = if i == j {
                    let r = &l[i * n..i * n + j];
                    (r, r)
                } else {
                    let (head, tail) = l.split_at(i * n);
                    (&tail[..j], &head[j * n..j * n + j])
                };
                let dot: f64 = row_i.iter().zip(row_j).map(|(a, b)| a * b).sum();
                if i == j {
                    let d = a[(i, i)] + jitter - dot;
                    if !(d > 0.0) || !d.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: d });
                    }
                    l[i * n + i] = d.sqrt();
                } else {
                    l[i * n + j] = (a[(i, j)] - dot) / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.l[i * self.n + j]
        }
    }

    /// `log |A| = 2 sum log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let dot: f64 = row.iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - dot) / self.l[i * n + i];
        }
        y
    }

    /// Solves `L^T x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n);
        let n = self.n;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            x[i] /= self.l[i * n + i];
            let xi = x[i];
            let row = &self.l[i * n..i * n + i];
            for (xk, lik) in x[..i].iter_mut().zip(row) {
                *xk -= lik * xi;
            }
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `L^{-1} B` for a dense right-hand side.
    pub fn solve_lower_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            let col: Vec<f64> = b.column(c).iter().copied().collect();
            let y = self.solve_lower(&col);
            out.column_mut(c).copy_from_slice(&y);
        }
        out
    }

    /// The factor as a dense lower-triangular matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}
