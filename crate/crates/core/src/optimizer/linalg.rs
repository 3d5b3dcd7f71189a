//! Small dense matrices for the per-image normal equations.

use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `(J^T J, J^T r)`.
    pub fn normal_equations(&self, residuals: &[T]) -> (DenseMatrix<T>, Vec<T>) {
        assert_eq!(residuals.len(), self.rows);
        let n = self.cols;
        let mut jtj = DenseMatrix::zeros(n, n);
        let mut jtr = vec![T::zero(); n];
        for (r, &res) in residuals.iter().enumerate() {
            let row = self.row(r);
            for a in 0..n {
                let ja = row[a];
                if ja == T::zero() {
                    continue;
                }
                jtr[a] += ja * res;
                for b in a..n {
                    jtj.data[a * n + b] += ja * row[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                jtj.data[a * n + b] = jtj.data[b * n + a];
            }
        }
        (jtj, jtr)
    }
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky
/// factorization. Returns `None` when `A` is not numerically SPD.
pub fn cholesky_solve<T: Real>(a: &DenseMatrix<T>, b: &[T]) -> Option<Vec<T>> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.len(), n);
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(sum > T::zero()) || !sum.is_finite() {
                    return None;
                }
                l.set(i, i, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    // forward then backward substitution
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l.get(i, k) * y[k];
        }
        y[i] = sum / l.get(i, i);
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l.get(k, i) * x[k];
        }
        x[i] = sum / l.get(i, i);
    }
    Some(x)
}
