use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::linalg::DenseCholesky;
use crate::scalar::{lit, Scalar};

/// Covariance `Σ` of the centered Gaussian noise together with its Cholesky root.
#[derive(Debug, Clone)]
pub struct CovarianceModel<T> {
    m: usize,
    sigma: Vec<T>,
    root: DenseCholesky<T>,
}

impl<T: Scalar> CovarianceModel<T> {
    /// `Σ_ij = scale * decay^|i-j|`
    pub fn geometric(m: usize, scale: T, decay: T) -> Result<Self> {
        let sigma = (0..m * m)
            .map(|k| scale * decay.powi((k / m).abs_diff(k % m) as i32))
            .collect();
        Self::from_matrix(m, sigma)
    }

    pub fn identity(m: usize) -> Result<Self> {
        let sigma = (0..m * m)
            .map(|k| if k / m == k % m { T::one() } else { T::zero() })
            .collect();
        Self::from_matrix(m, sigma)
    }

    /// Row-major `m x m` matrix; must be symmetric positive definite.
    pub fn from_matrix(m: usize, sigma: Vec<T>) -> Result<Self> {
        if m == 0 {
            return arg("covariance dimension must be positive");
        }
        if sigma.len() != m * m {
            return arg(format!("covariance needs {} entries, got {}", m * m, sigma.len()));
        }
        let tol = lit::<T>(1e-12);
        for i in 0..m {
            for j in 0..i {
                let (a, b) = (sigma[i * m + j], sigma[j * m + i]);
                if (a - b).abs() > tol * (a.abs() + b.abs() + T::one()) {
                    return arg(format!("covariance is not symmetric at ({i}, {j})"));
                }
            }
        }
        let root = DenseCholesky::factor(m, &sigma)?;
        Ok(Self { m, sigma, root })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn sigma(&self, i: usize, j: usize) -> T {
        self.sigma[i * self.m + j]
    }

    pub fn sigma_matrix(&self) -> &[T] {
        &self.sigma
    }

    /// Lower Cholesky factor `L` (`L Lᵀ = Σ`), row-major.
    pub fn sqrt_factor(&self) -> &[T] {
        self.root.lower()
    }

    /// `Σ^{1/2} v` with the Cholesky root.
    pub fn apply_sqrt(&self, v: &[T]) -> Vec<T> {
        self.root.mul_lower(v)
    }

    /// `zᵀ Σ⁻¹ z = ‖L⁻¹ z‖²`
    pub fn mahalanobis_sq(&self, z: &[T]) -> T {
        self.root.solve_lower(z).iter().map(|&w| w * w).sum()
    }

    pub fn sigma_mul(&self, c: &[T]) -> Vec<T> {
        let m = self.m;
        (0..m)
            .map(|i| (0..m).map(|j| self.sigma[i * m + j] * c[j]).sum())
            .collect()
    }

    /// `cᵀ Σ c`
    pub fn quad_form(&self, c: &[T]) -> T {
        self.sigma_mul(c).iter().zip(c).map(|(&a, &b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportKind {
    FullSpace,
    Ellipsoid,
}

/// Support of the noise law: all of `R^m`, or the Mahalanobis ball `zᵀΣ⁻¹z ≤ radius²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportSpec<T> {
    pub kind: SupportKind,
    pub radius: T,
}

impl<T: Scalar> SupportSpec<T> {
    pub fn full_space() -> Self {
        Self {
            kind: SupportKind::FullSpace,
            radius: T::infinity(),
        }
    }

    pub fn ellipsoid(radius: T) -> Result<Self> {
        let s = Self {
            kind: SupportKind::Ellipsoid,
            radius,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == SupportKind::Ellipsoid && !(self.radius > T::zero() && self.radius.is_finite()) {
            return arg(format!("ellipsoid radius must be positive and finite, got {}", self.radius));
        }
        Ok(())
    }

    pub fn radius(&self) -> Option<T> {
        match self.kind {
            SupportKind::Ellipsoid => Some(self.radius),
            SupportKind::FullSpace => None,
        }
    }

    /// `s(z) = zᵀΣ⁻¹z - R²`; nonpositive exactly on the support.
    pub fn level(&self, cov: &CovarianceModel<T>, z: &[T]) -> T {
        match self.kind {
            SupportKind::FullSpace => T::neg_infinity(),
            SupportKind::Ellipsoid => cov.mahalanobis_sq(z) - self.radius * self.radius,
        }
    }
}
