use crate::error::{arg, Result};
use crate::scalar::{count, lit, Scalar};

use super::special::{gamma_p, ln_gamma};

/// Chi distribution with `dof` degrees of freedom (law of `‖ξ‖` for `ξ ~ N(0, I_dof)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiDistribution<T> {
    dof: usize,
    half_dof: T,
    /// `ln(2^{dof/2 - 1} Γ(dof/2))`
    ln_norm: T,
}

impl<T: Scalar> ChiDistribution<T> {
    pub fn new(dof: usize) -> Result<Self> {
        if dof == 0 {
            return arg("chi distribution needs at least one degree of freedom");
        }
        let half_dof = count::<T>(dof) / lit(2.0);
        let ln_norm = (half_dof - T::one()) * T::LN_2() + ln_gamma(half_dof);
        Ok(Self {
            dof,
            half_dof,
            ln_norm,
        })
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn pdf(&self, t: T) -> Result<T> {
        if !(t >= T::zero()) {
            return arg(format!("chi density needs t >= 0, got {t}"));
        }
        if t.is_infinite() {
            return Ok(T::zero());
        }
        if t == T::zero() {
            return Ok(if self.dof == 1 {
                (-self.ln_norm).exp()
            } else {
                T::zero()
            });
        }
        let m1 = count::<T>(self.dof - 1);
        Ok((m1 * t.ln() - t * t / lit(2.0) - self.ln_norm).exp())
    }

    /// `F_χ(t) = P(dof/2, t²/2)`
    pub fn cdf(&self, t: T) -> Result<T> {
        if !(t >= T::zero()) {
            return arg(format!("chi cdf needs t >= 0, got {t}"));
        }
        gamma_p(self.half_dof, t * t / lit(2.0))
    }

    pub fn eval(&self, t: T) -> Result<(T, T)> {
        Ok((self.pdf(t)?, self.cdf(t)?))
    }
}
