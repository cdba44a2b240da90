//! Log-gamma, regularized incomplete gamma, and the inverse normal cdf.

use crate::error::{arg, Error, Result};
use crate::scalar::{lit, Scalar};

const MAX_ITER: usize = 500;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    let half = lit::<T>(0.5);
    if x < half {
        // reflection
        let pi = T::PI();
        return (pi / (pi * x).sin().abs()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = lit::<T>(LANCZOS[0]);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += lit::<T>(c) / (x + T::from_usize(i).unwrap());
    }
    let t = x + lit::<T>(LANCZOS_G) + half;
    half * (lit::<T>(2.0) * T::PI()).ln() + (x + half) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)` for `a > 0`, `x >= 0` (`x = +∞` allowed).
pub fn gamma_p<T: Scalar>(a: T, x: T) -> Result<T> {
    gamma_pq(a, x).map(|(p, _)| p)
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q<T: Scalar>(a: T, x: T) -> Result<T> {
    gamma_pq(a, x).map(|(_, q)| q)
}

fn gamma_pq<T: Scalar>(a: T, x: T) -> Result<(T, T)> {
    if !(a > T::zero()) || !(x >= T::zero()) {
        return arg(format!("incomplete gamma needs a > 0 and x >= 0 (a={a}, x={x})"));
    }
    if x == T::zero() {
        return Ok((T::zero(), T::one()));
    }
    if x.is_infinite() {
        return Ok((T::one(), T::zero()));
    }
    let prefactor = (-x + a * x.ln() - ln_gamma(a)).exp();
    if x < a + T::one() {
        let p = prefactor * lower_series(a, x)?;
        Ok((p, T::one() - p))
    } else {
        let q = prefactor * upper_continued_fraction(a, x)?;
        Ok((T::one() - q, q))
    }
}

fn lower_series<T: Scalar>(a: T, x: T) -> Result<T> {
    let eps = T::epsilon();
    let mut ap = a;
    let mut del = T::one() / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += T::one();
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * eps {
            return Ok(sum);
        }
    }
    Err(Error::NonConvergence(format!(
        "incomplete gamma series (a={a}, x={x})"
    )))
}

/// Modified Lentz evaluation of the continued fraction for `Q(a, x)`.
fn upper_continued_fraction<T: Scalar>(a: T, x: T) -> Result<T> {
    let eps = T::epsilon();
    let tiny = T::min_positive_value() / eps;
    let two = lit::<T>(2.0);
    let mut b = x + T::one() - a;
    let mut c = T::one() / tiny;
    let mut d = T::one() / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let fi = T::from_usize(i).unwrap();
        let an = -fi * (fi - a);
        b += two;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let del = d * c;
        h *= del;
        if (del - T::one()).abs() < eps {
            return Ok(h);
        }
    }
    Err(Error::NonConvergence(format!(
        "incomplete gamma continued fraction (a={a}, x={x})"
    )))
}

// Wichura, algorithm AS 241 (PPND16).
const A: [f64; 8] = [
    3.387_132_872_796_366_608,
    133.141_667_891_784_377_45,
    1_971.590_950_306_551_442_7,
    13_731.693_765_509_461_125,
    45_921.953_931_549_871_457,
    67_265.770_927_008_700_853,
    33_430.575_583_588_128_105,
    2_509.080_928_730_122_672_7,
];
const B: [f64; 8] = [
    1.0,
    42.313_330_701_600_911_252,
    687.187_007_492_057_908_3,
    5_394.196_021_424_751_107_7,
    21_213.794_301_586_595_867,
    39_307.895_800_092_710_61,
    28_729.085_735_721_942_674,
    5_226.495_278_852_854_561,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    0.241_780_725_177_450_611_77,
    0.022_723_844_989_269_184_583_3,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    0.689_767_334_985_100_004_55,
    0.148_103_976_427_480_074_59,
    0.015_198_666_563_616_457_196_6,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    0.296_560_571_828_504_891_23,
    0.026_532_189_526_576_123_093,
    0.001_242_660_947_388_078_438_6,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    0.599_832_206_555_887_937_69,
    0.136_929_880_922_735_805_31,
    0.014_875_361_290_850_614_852_5,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

fn poly<T: Scalar>(coef: &[f64; 8], r: T) -> T {
    coef.iter().rev().fold(T::zero(), |acc, &c| acc * r + lit::<T>(c))
}

/// Standard normal quantile `Φ⁻¹(p)` for `p ∈ (0, 1)`.
pub fn inverse_normal_cdf<T: Scalar>(p: T) -> Result<T> {
    if !(p > T::zero() && p < T::one()) {
        return arg(format!("normal quantile needs p in (0,1), got {p}"));
    }
    let q = p - lit::<T>(0.5);
    if q.abs() <= lit::<T>(0.425) {
        let r = lit::<T>(0.180_625) - q * q;
        return Ok(q * poly(&A, r) / poly(&B, r));
    }
    let r = if q < T::zero() { p } else { T::one() - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= lit::<T>(5.0) {
        let r = r - lit::<T>(1.6);
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - lit::<T>(5.0);
        poly(&E, r) / poly(&F, r)
    };
    Ok(if q < T::zero() { -x } else { x })
}

/// Standard normal cdf via `Φ(x) = (1 + sign(x) P(1/2, x²/2)) / 2`.
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    let half = lit::<T>(0.5);
    let p = gamma_p(half, half * x * x).unwrap_or(T::one());
    if x >= T::zero() {
        half * (T::one() + p)
    } else {
        half * gamma_q(half, half * x * x).unwrap_or(T::zero())
    }
}
