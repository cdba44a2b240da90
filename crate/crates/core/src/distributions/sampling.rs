//! Sphere and support samplers.
//!
//! Every draw is a function of `(seed, index)` only: pseudorandom draws use a
//! ChaCha stream per index and the low-discrepancy draws use the Halton point
//! with that index, so samples can be produced in any order or in parallel.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::scalar::{lit, Scalar};

use super::covariance::{CovarianceModel, SupportKind, SupportSpec};
use super::special::inverse_normal_cdf;

/// Consecutive rejections tolerated before the truncation radius is deemed too small.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereMode {
    Qmc,
    Mc,
}

impl FromStr for SphereMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qmc" => Ok(SphereMode::Qmc),
            "mc" => Ok(SphereMode::Mc),
            other => arg(format!("unknown sphere sampling mode `{other}`")),
        }
    }
}

impl fmt::Display for SphereMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SphereMode::Qmc => "qmc",
            SphereMode::Mc => "mc",
        })
    }
}

/// How scenarios for the almost sure problem are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportScheme {
    /// The (truncated) Gaussian itself, by rejection.
    Distribution,
    /// `R τ Σ^{1/2} v` with `τ` drawn from the radial law.
    Interior,
    /// `R Σ^{1/2} v`, points on the ellipsoid surface.
    Boundary,
}

impl SupportScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            SupportScheme::Distribution => "distribution",
            SupportScheme::Interior => "interior",
            SupportScheme::Boundary => "boundary",
        }
    }
}

impl FromStr for SupportScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distribution" => Ok(SupportScheme::Distribution),
            "interior" => Ok(SupportScheme::Interior),
            "boundary" => Ok(SupportScheme::Boundary),
            other => arg(format!("unknown sampling scheme `{other}`")),
        }
    }
}

/// Law of the radial factor `τ` in the interior scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialLaw {
    /// `τ ~ U[0, 1]`.
    #[default]
    Linear,
    /// `τ = U^{1/m}`, which is uniform with respect to volume.
    Volume,
}

/// Frozen sample of unit directions.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereSample<T> {
    pub mode: SphereMode,
    pub seed: u64,
    pub dirs: Vec<Vec<T>>,
}

impl<T: Scalar> SphereSample<T> {
    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dirs.first().map_or(0, Vec::len)
    }

    pub fn id(&self) -> String {
        format!("{}:m{}:k{}:seed{}", self.mode, self.dim(), self.len(), self.seed)
    }
}

pub(crate) fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

fn normalize<T: Scalar>(mut v: Vec<T>) -> Option<Vec<T>> {
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if !(n > T::epsilon()) || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

fn gaussian_vec<T: Scalar>(rng: &mut ChaCha8Rng, m: usize) -> Vec<T> {
    (0..m)
        .map(|_| lit::<T>(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn halton_direction<T: Scalar>(index: u64, primes: &[u64]) -> Result<Vec<T>> {
    primes
        .iter()
        .map(|&b| inverse_normal_cdf(lit::<T>(radical_inverse(index, b))))
        .collect()
}

/// `k` unit vectors in `R^m`.
///
/// `Qmc`: Halton points (bases = first `m` primes) starting at index `1 + seed`,
/// mapped coordinatewise through `Φ⁻¹` and normalized. `Mc`: normalized standard
/// Gaussian draws. Degenerate points are skipped and the sequence extended.
pub fn sample_sphere<T: Scalar>(m: usize, k: usize, mode: SphereMode, seed: u64) -> Result<SphereSample<T>> {
    if m == 0 || k == 0 {
        return arg(format!("sphere sample needs m >= 1 and k >= 1 (m={m}, k={k})"));
    }
    let mut dirs = Vec::with_capacity(k);
    match mode {
        SphereMode::Qmc => {
            let primes = first_primes(m);
            let mut index = 1 + seed;
            while dirs.len() < k {
                if let Some(v) = normalize(halton_direction::<T>(index, &primes)?) {
                    dirs.push(v);
                }
                index += 1;
            }
        }
        SphereMode::Mc => {
            let mut index = 0u64;
            while dirs.len() < k {
                let mut rng = stream_rng(seed, index);
                if let Some(v) = normalize(gaussian_vec::<T>(&mut rng, m)) {
                    dirs.push(v);
                }
                index += 1;
            }
        }
    }
    Ok(SphereSample { mode, seed, dirs })
}

/// Draws `k` noise vectors from the support according to `scheme`, with the
/// linear radial law for the interior scheme.
pub fn sample_support<T: Scalar>(
    cov: &CovarianceModel<T>,
    support: &SupportSpec<T>,
    k: usize,
    scheme: SupportScheme,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    sample_support_with_law(cov, support, k, scheme, seed, RadialLaw::Linear)
}

pub fn sample_support_with_law<T: Scalar>(
    cov: &CovarianceModel<T>,
    support: &SupportSpec<T>,
    k: usize,
    scheme: SupportScheme,
    seed: u64,
    law: RadialLaw,
) -> Result<Vec<Vec<T>>> {
    let m = cov.dim();
    if scheme != SupportScheme::Distribution && support.kind != SupportKind::Ellipsoid {
        return Err(Error::Configuration(format!(
            "the {} scheme needs an ellipsoidal support",
            scheme.as_str()
        )));
    }
    (0..k as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = stream_rng(seed, index);
            match scheme {
                SupportScheme::Distribution => truncated_gaussian(cov, support, &mut rng),
                SupportScheme::Interior | SupportScheme::Boundary => {
                    let v = loop {
                        if let Some(v) = normalize(gaussian_vec::<T>(&mut rng, m)) {
                            break v;
                        }
                    };
                    let tau = match (scheme, law) {
                        (SupportScheme::Boundary, _) => T::one(),
                        (_, RadialLaw::Linear) => lit(rng.random::<f64>()),
                        (_, RadialLaw::Volume) => lit(rng.random::<f64>().powf(1.0 / m as f64)),
                    };
                    let scale = support.radius * tau;
                    Ok(cov.apply_sqrt(&v).into_iter().map(|x| scale * x).collect())
                }
            }
        })
        .collect()
}

/// One draw of `N(0, Σ)` conditioned on the support (plain Gaussian on the full space).
pub(crate) fn truncated_gaussian<T: Scalar>(
    cov: &CovarianceModel<T>,
    support: &SupportSpec<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<T>> {
    let m = cov.dim();
    let r2 = support.radius * support.radius;
    for _ in 0..MAX_CONSECUTIVE_REJECTIONS {
        let w = gaussian_vec::<T>(rng, m);
        // zᵀΣ⁻¹z = ‖w‖² for z = L w
        if support.kind == SupportKind::FullSpace || w.iter().map(|&x| x * x).sum::<T>() <= r2 {
            return Ok(cov.apply_sqrt(&w));
        }
    }
    Err(Error::Configuration(format!(
        "rejection sampling stalled: truncation radius {} is too small",
        support.radius
    )))
}
