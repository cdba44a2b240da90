//! Small dense and banded factorizations used by the PDE and QP code.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense lower-triangular Cholesky factor of an SPD matrix, row-major.
#[derive(Debug, Clone)]
pub struct DenseCholesky<T> {
    n: usize,
    lower: Vec<T>,
}

impl<T: Scalar> DenseCholesky<T> {
    pub fn factor(n: usize, a: &[T]) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::Argument(format!(
                "matrix has {} entries, expected {}",
                a.len(),
                n * n
            )));
        }
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > T::zero()) {
                        return Err(Error::Factorization(format!(
                            "non-positive pivot {sum} at row {i}"
                        )));
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Ok(Self { n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Row-major lower factor `L` with `L Lᵀ = A`.
    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    /// `L x`
    pub fn mul_lower(&self, x: &[T]) -> Vec<T> {
        let n = self.n;
        (0..n)
            .map(|i| (0..=i).map(|k| self.lower[i * n + k] * x[k]).sum())
            .collect()
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.lower[k * n + i] * x[k];
            }
            x[i] = s / self.lower[i * n + i];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }
}

/// Cholesky factor of a symmetric banded matrix with half-bandwidth `bw`.
///
/// Row `i` stores columns `i-bw ..= i` at offsets `0 ..= bw`; entries left of
/// column zero are padding.
#[derive(Debug, Clone)]
pub struct BandCholesky<T> {
    n: usize,
    bw: usize,
    band: Vec<T>,
}

impl<T: Scalar> BandCholesky<T> {
    /// Factors the matrix whose lower band is given by `entry(i, j)` for
    /// `i - bw <= j <= i`.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> T) -> Result<Self> {
        let w = bw + 1;
        let mut band = vec![T::zero(); n * w];
        let idx = |i: usize, j: usize| i * w + (j + bw - i);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut sum = entry(i, j);
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    sum -= band[idx(i, k)] * band[idx(j, k)];
                }
                if i == j {
                    if !(sum > T::zero()) {
                        return Err(Error::Factorization(format!(
                            "non-positive pivot {sum} at row {i}"
                        )));
                    }
                    band[idx(i, i)] = sum.sqrt();
                } else {
                    band[idx(i, j)] = sum / band[idx(j, j)];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let idx = |i: usize, j: usize| i * w + (j + bw - i);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.band[idx(i, k)] * x[k];
            }
            x[i] = s / self.band[idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.band[idx(k, i)] * x[k];
            }
            x[i] = s / self.band[idx(i, i)];
        }
    }
}
