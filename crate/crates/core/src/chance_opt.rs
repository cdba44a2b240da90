//! `min ‖u‖² s.t. φ̂(u) ≥ p` (optionally with box bounds) by an augmented
//! Lagrangian on `c(u) = φ̂(u) − p ≥ 0` with a spectral projected-gradient
//! inner solver. The sphere sample is drawn once per solve.

use serde::Serialize;

use crate::distributions::{sample_sphere, SphereMode, SphereSample};
use crate::error::{arg, Error, Result};
use crate::pde::{precompute_states, LaplacianOperator, StateBundle};
use crate::problem::{Field, ProblemSpec};
use crate::scalar::{lit, Scalar};
use crate::srd::{SrdEstimate, SrdEvaluator, SrdMode, DEFAULT_TIE_TOL};

/// Level used in place of `p = 1`, which leaves no slack.
pub const ALMOST_SURE_LEVEL: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChanceSolveConfig<T> {
    pub p_level: T,
    /// Sphere sample size `K`.
    pub n_directions: usize,
    pub sphere_mode: SphereMode,
    pub seed: u64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub lambda0: T,
    pub mu0: T,
    pub growth: T,
    /// Projected-gradient norm at which an inner solve stops.
    pub inner_tol: T,
    /// Bound on `max(0, p − φ̂)` at termination.
    pub outer_tol: T,
    /// Largest `φ̂ − p` accepted while the multiplier is positive.
    pub complementarity_tol: T,
}

impl<T: Scalar> Default for ChanceSolveConfig<T> {
    fn default() -> Self {
        Self {
            p_level: lit(0.9),
            n_directions: 512,
            sphere_mode: SphereMode::Qmc,
            seed: 0,
            max_outer: 40,
            max_inner: 1000,
            lambda0: T::zero(),
            mu0: lit(10.0),
            growth: lit(10.0),
            inner_tol: lit(1e-6),
            outer_tol: lit(1e-4),
            complementarity_tol: lit(1e-3),
        }
    }
}

impl<T: Scalar> ChanceSolveConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Configuration(m.to_string()));
        if !(self.p_level > T::zero() && self.p_level <= T::one()) {
            return bad("p_level must lie in (0, 1]");
        }
        if self.n_directions == 0 || self.max_outer == 0 || self.max_inner == 0 {
            return bad("n_directions, max_outer and max_inner must be positive");
        }
        if !(self.lambda0 >= T::zero()) || !(self.mu0 > T::zero()) {
            return bad("need lambda0 >= 0 and mu0 > 0");
        }
        if !(self.growth > T::one()) {
            return bad("penalty growth factor must exceed 1");
        }
        if !(self.inner_tol > T::zero() && self.outer_tol > T::zero() && self.complementarity_tol > T::zero()) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxOuterIterations,
}

#[derive(Debug, Clone, Serialize)]
pub struct OuterIterate<T> {
    pub outer: usize,
    pub inner_iterations: usize,
    pub inner_converged: bool,
    pub objective: T,
    pub prob: T,
    pub lambda: T,
    pub mu: T,
    pub violation: T,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChanceReport<T> {
    pub status: SolveStatus,
    pub p_level: T,
    pub objective: T,
    pub prob: T,
    pub violation: T,
    pub multiplier: T,
    pub tie_fraction: T,
    pub outer: Vec<OuterIterate<T>>,
    /// `φ̂` at every accepted inner iterate.
    pub prob_history: Vec<T>,
    /// Uniform downward shift applied to the initial control.
    pub initial_shift: T,
    pub active_lower: Vec<usize>,
    pub active_upper: Vec<usize>,
    pub sphere_sample: String,
    #[serde(skip)]
    pub iterates: Vec<Field<T>>,
}

impl<T> ChanceReport<T> {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// SRD mode implied by the support, with the level used in place of `p = 1`.
fn effective_level<T: Scalar>(spec: &ProblemSpec<T>, p: T) -> Result<T> {
    if p >= T::one() {
        if spec.support_radius().is_none() {
            return Err(Error::Configuration(
                "p = 1 needs an ellipsoidal support (truncated Gaussian)".into(),
            ));
        }
        return Ok(lit(ALMOST_SURE_LEVEL));
    }
    Ok(p)
}

struct Problem<'a, T> {
    op: &'a LaplacianOperator<T>,
    base: &'a StateBundle<T>,
    eval: &'a SrdEvaluator<T>,
    alpha: T,
    mode: SrdMode<T>,
    bounds: Option<(T, T)>,
}

impl<T: Scalar> Problem<'_, T> {
    /// `None` when the mean state violates `ȳ < α` somewhere.
    fn srd(&self, u: &Field<T>) -> Result<Option<SrdEstimate<T>>> {
        let b = self.base.with_control(self.op, u)?;
        match self.eval.evaluate(self.op, &b.mean_state, self.alpha, self.mode, lit(DEFAULT_TIE_TOL)) {
            Ok(e) => Ok(Some(e)),
            Err(Error::StateConstraint { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn project(&self, u: &Field<T>) -> Field<T> {
        match self.bounds {
            Some((lo, hi)) => u.map(|x| x.max(lo).min(hi)),
            None => u.clone(),
        }
    }

    fn mean_ok(&self, u: &Field<T>) -> Result<bool> {
        let b = self.base.with_control(self.op, u)?;
        Ok(b.mean_state.values().iter().all(|&y| y < self.alpha))
    }
}

#[derive(Clone)]
struct Point<T> {
    u: Field<T>,
    value: T,
    grad: Field<T>,
    est: SrdEstimate<T>,
}

/// `F + (1/2μ)(max(0, λ − μc)² − λ²)` and its gradient, or `None` at invalid points.
fn lagrangian<T: Scalar>(pb: &Problem<T>, u: Field<T>, p: T, lambda: T, mu: T) -> Result<Option<Point<T>>> {
    let Some(est) = pb.srd(&u)? else {
        return Ok(None);
    };
    let c = est.prob - p;
    let s = (lambda - mu * c).max(T::zero());
    let two = lit::<T>(2.0);
    let value = u.norm_sq() + (s * s - lambda * lambda) / (two * mu);
    let grad = u.scaled(two).plus_scaled(-s, &est.grad);
    Ok(Some(Point { u, value, grad, est }))
}

/// Nonmonotone spectral projected gradient on the augmented Lagrangian.
fn inner_solve<T: Scalar>(
    pb: &Problem<T>,
    start: Point<T>,
    p: T,
    lambda: T,
    mu: T,
    cfg: &ChanceSolveConfig<T>,
    prob_history: &mut Vec<T>,
) -> Result<(Point<T>, usize, bool)> {
    const MEMORY: usize = 10;
    const STALL: usize = 30;
    let sigma = lit::<T>(1e-4);
    // start may come from an earlier multiplier; re-evaluate
    let mut x = lagrangian(pb, start.u, p, lambda, mu)?.expect("start point is valid");
    let mut recent = vec![x.value];
    let mut t = T::one() / x.grad.norm().max(lit(1e-12));
    // the kinks of the sampled probability keep the projected gradient from
    // vanishing, so the best point is tracked and a stall ends the loop
    let mut best = x.clone();
    let mut stalled = 0;
    for it in 0..cfg.max_inner {
        let pg = pb.project(&x.u.plus_scaled(-T::one(), &x.grad)).plus_scaled(-T::one(), &x.u);
        if pg.norm() <= cfg.inner_tol {
            return Ok((x, it, true));
        }
        if stalled >= STALL {
            return Ok((best, it, false));
        }
        let d = pb.project(&x.u.plus_scaled(-t, &x.grad)).plus_scaled(-T::one(), &x.u);
        let slope = x.grad.dot_unchecked(&d);
        let f_ref = recent.iter().copied().fold(T::neg_infinity(), T::max);
        let mut step = T::one();
        let mut next = None;
        for _ in 0..60 {
            let cand = x.u.plus_scaled(step, &d);
            if let Some(pt) = lagrangian(pb, cand, p, lambda, mu)? {
                if pt.value <= f_ref + sigma * step * slope {
                    next = Some(pt);
                    break;
                }
            }
            step = step / lit(2.0);
        }
        let Some(nx) = next else {
            // no acceptable step along d: stationary up to line-search resolution
            return Ok((best, it, false));
        };
        let s = nx.u.plus_scaled(-T::one(), &x.u);
        let y = nx.grad.plus_scaled(-T::one(), &x.grad);
        let sy = s.dot_unchecked(&y);
        t = if sy > T::zero() {
            (s.norm_sq() / sy).max(lit(1e-10)).min(lit(1e10))
        } else {
            lit(1e10)
        };
        x = nx;
        prob_history.push(x.est.prob);
        recent.push(x.value);
        if recent.len() > MEMORY {
            recent.remove(0);
        }
        if x.value < best.value - lit::<T>(1e-12) * (T::one() + best.value.abs()) {
            best = x.clone();
            stalled = 0;
        } else {
            stalled += 1;
        }
    }
    Ok((best, cfg.max_inner, false))
}

pub fn solve_chance<T: Scalar>(
    spec: &ProblemSpec<T>,
    cfg: &ChanceSolveConfig<T>,
    u0: &Field<T>,
) -> Result<(Field<T>, ChanceReport<T>)> {
    cfg.validate()?;
    let op = LaplacianOperator::new(spec.grid()?)?;
    let sample = sample_sphere(spec.m(), cfg.n_directions, cfg.sphere_mode, cfg.seed)?;
    solve_chance_with(spec, &op, &sample, cfg, u0)
}

/// Solve with a given operator and sphere sample (shared across sweeps).
pub fn solve_chance_with<T: Scalar>(
    spec: &ProblemSpec<T>,
    op: &LaplacianOperator<T>,
    sample: &SphereSample<T>,
    cfg: &ChanceSolveConfig<T>,
    u0: &Field<T>,
) -> Result<(Field<T>, ChanceReport<T>)> {
    cfg.validate()?;
    let p = effective_level(spec, cfg.p_level)?;
    let base = precompute_states(spec, op, u0)?;
    let eval = SrdEvaluator::new(base.basis(), &spec.cov, sample)?;
    let pb = Problem {
        op,
        base: &base,
        eval: &eval,
        alpha: spec.alpha,
        mode: SrdMode::for_support(&spec.support),
        bounds: spec.control_bounds,
    };

    // pre-phase: uniform downward shift until ȳ < α
    let mut u = pb.project(u0);
    let mut shift = T::zero();
    if !pb.mean_ok(&u)? {
        let mut s = T::one();
        loop {
            let cand = pb.project(&u0.map(|x| x - s));
            if pb.mean_ok(&cand)? {
                u = cand;
                shift = s;
                break;
            }
            s = s * lit(2.0);
            if !s.is_finite() || s > lit(1e12) {
                return Err(Error::StateConstraint {
                    node: 0,
                    value: f64::INFINITY,
                    alpha: crate::scalar::to_f64(spec.alpha),
                });
            }
        }
    }

    let mut lambda = cfg.lambda0;
    let mut mu = cfg.mu0;
    let mut x = lagrangian(&pb, u, p, lambda, mu)?.expect("pre-phase guarantees a valid start");
    let mut outer = Vec::new();
    let mut prob_history = vec![x.est.prob];
    let mut iterates = Vec::new();
    let mut last_violation = T::infinity();
    let mut status = SolveStatus::MaxOuterIterations;
    for k in 0..cfg.max_outer {
        let (nx, inner_it, inner_ok) = inner_solve(&pb, x, p, lambda, mu, cfg, &mut prob_history)?;
        x = nx;
        let c = x.est.prob - p;
        let violation = (-c).max(T::zero());
        lambda = (lambda - mu * c).max(T::zero());
        outer.push(OuterIterate {
            outer: k,
            inner_iterations: inner_it,
            inner_converged: inner_ok,
            objective: x.u.norm_sq(),
            prob: x.est.prob,
            lambda,
            mu,
            violation,
        });
        iterates.push(x.u.clone());
        if violation <= cfg.outer_tol && (lambda == T::zero() || c <= cfg.complementarity_tol) {
            status = SolveStatus::Converged;
            break;
        }
        if violation > lit::<T>(0.25) * last_violation {
            mu = mu * cfg.growth;
        }
        last_violation = violation;
    }

    let (active_lower, active_upper) = match spec.control_bounds {
        Some((lo, hi)) => (
            (0..x.u.len()).filter(|&j| x.u.values()[j] <= lo).collect(),
            (0..x.u.len()).filter(|&j| x.u.values()[j] >= hi).collect(),
        ),
        None => (Vec::new(), Vec::new()),
    };
    let report = ChanceReport {
        status,
        p_level: cfg.p_level,
        objective: x.u.norm_sq(),
        prob: x.est.prob,
        violation: (p - x.est.prob).max(T::zero()),
        multiplier: lambda,
        tie_fraction: x.est.tie_fraction,
        outer,
        prob_history,
        initial_shift: shift,
        active_lower,
        active_upper,
        sphere_sample: sample.id(),
        iterates,
    };
    Ok((x.u, report))
}

#[derive(Debug, Clone)]
pub struct SweepPoint<T> {
    pub p: T,
    pub control: Field<T>,
    pub objective: T,
    pub report: ChanceReport<T>,
}

/// Warm-started solves over increasing levels with one shared sphere sample.
pub fn p_sweep<T: Scalar>(spec: &ProblemSpec<T>, cfg: &ChanceSolveConfig<T>, levels: &[T]) -> Result<Vec<SweepPoint<T>>> {
    if levels.is_empty() {
        return arg("p_sweep needs at least one level");
    }
    if levels.windows(2).any(|w| !(w[0] < w[1])) {
        return arg("levels must be strictly increasing");
    }
    let op = LaplacianOperator::new(spec.grid()?)?;
    let sample = sample_sphere(spec.m(), cfg.n_directions, cfg.sphere_mode, cfg.seed)?;
    let mut u = Field::zeros(op.grid().clone());
    let mut out = Vec::with_capacity(levels.len());
    for &p in levels {
        let c = ChanceSolveConfig { p_level: p, ..*cfg };
        let (u_p, report) = solve_chance_with(spec, &op, &sample, &c, &u)?;
        u = u_p.clone();
        out.push(SweepPoint {
            p,
            objective: report.objective,
            control: u_p,
            report,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::distributions::{CovarianceModel, SupportSpec};
    use crate::problem::{builtin_problem, BuiltinProblem};
    use crate::srd::estimate;

    #[test]
    fn inactive_constraint_gives_zero() {
        let mut spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap().with_cells(30);
        spec.alpha = 1e6;
        let u0 = Field::constant(spec.grid().unwrap(), 0.5);
        let (u, rep) = solve_chance(&spec, &ChanceSolveConfig::default(), &u0).unwrap();
        assert!(rep.converged());
        assert!(u.norm() <= 1e-6, "{}", u.norm());
        assert_eq!(rep.prob, 1.0);
    }

    /// m = 1 on three nodes, φ_1 ≡ 1, f_0 = 0: with directions ±1 only the
    /// positive one has finite ρ, so KKT forces `u* = −s·g_j` for a node `j`.
    #[test]
    fn toy_problem_matches_one_variable_search() {
        let mut spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap();
        spec.n_cells = 4;
        spec.f0 = Arc::new(|_| 0.0);
        spec.phis = vec![Arc::new(|_| 1.0)];
        spec.cov = Arc::new(CovarianceModel::identity(1).unwrap());
        spec.support = SupportSpec::full_space();
        spec.alpha = 0.2;
        let op = LaplacianOperator::new(spec.grid().unwrap()).unwrap();
        let sample = SphereSample {
            mode: SphereMode::Mc,
            seed: 0,
            dirs: vec![vec![1.0], vec![-1.0]],
        };
        let p = 0.98;
        let cfg = ChanceSolveConfig {
            p_level: p,
            outer_tol: 1e-10,
            complementarity_tol: 1e-9,
            inner_tol: 1e-11,
            max_outer: 60,
            ..ChanceSolveConfig::default()
        };
        let u0 = Field::zeros(op.grid().clone());
        let (u, rep) = solve_chance_with(&spec, &op, &sample, &cfg, &u0).unwrap();
        assert!(rep.converged(), "{:?}", rep.outer.last());

        let zero = precompute_states(&spec, &op, &u0).unwrap();
        let prob = |v: &Field<f64>| {
            let b = zero.with_control(&op, v).unwrap();
            estimate(&b, &spec.cov, spec.alpha, &sample, &op, SrdMode::Gaussian).unwrap()
        };
        let mut best: Option<Field<f64>> = None;
        for j in 0..3 {
            let g = op.green_row(j).unwrap();
            // grid search for the first s with φ(−s g) ≥ p, then bisection
            let mut lo = 0.0;
            let mut hi = f64::NAN;
            for i in 1..=4000 {
                let s = i as f64 * 0.01;
                if prob(&g.scaled(-s)).prob >= p {
                    hi = s;
                    break;
                }
                lo = s;
            }
            if hi.is_nan() {
                continue;
            }
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if prob(&g.scaled(-mid)).prob >= p {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let cand = g.scaled(-hi);
            // KKT consistency: the binding node must be j
            if prob(&cand).samples[0].argmin_node != Some(j) {
                continue;
            }
            if best.as_ref().is_none_or(|b| cand.norm() < b.norm()) {
                best = Some(cand);
            }
        }
        let want = best.unwrap();
        assert!(u.distance(&want).unwrap() < 1e-4, "{:?} vs {:?}", u.values(), want.values());
    }

    #[test]
    fn single_level_sweep_equals_single_solve() {
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap().with_cells(30);
        let cfg = ChanceSolveConfig::default();
        let sweep = p_sweep(&spec, &cfg, &[0.9]).unwrap();
        let (u, rep) = solve_chance(&spec, &cfg, &Field::zeros(spec.grid().unwrap())).unwrap();
        assert_eq!(sweep.len(), 1);
        assert_eq!(sweep[0].control.values(), u.values());
        assert_eq!(sweep[0].objective, rep.objective);
    }

    #[test]
    fn level_one_needs_truncation() {
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap().with_cells(30);
        let cfg = ChanceSolveConfig { p_level: 1.0, ..ChanceSolveConfig::default() };
        assert!(matches!(
            solve_chance(&spec, &cfg, &Field::zeros(spec.grid().unwrap())),
            Err(Error::Configuration(_))
        ));
        assert!(p_sweep(&spec, &cfg, &[0.95, 0.9]).is_err());
    }

    #[test]
    fn infeasible_start_is_shifted_down() {
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap().with_cells(30);
        let u0 = Field::constant(spec.grid().unwrap(), 10.0);
        let (_, rep) = solve_chance(&spec, &ChanceSolveConfig::default(), &u0).unwrap();
        assert!(rep.initial_shift >= 10.0);
        assert!(rep.converged());
        assert!(rep.prob >= 0.9 - 1e-4);
    }

    #[test]
    fn solves_are_reproducible_and_feasible_sets_convex() {
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap().with_cells(30);
        let cfg = ChanceSolveConfig::default();
        let grid = spec.grid().unwrap();
        let (a, ra) = solve_chance(&spec, &cfg, &Field::zeros(grid.clone())).unwrap();
        let (b, _) = solve_chance(&spec, &cfg, &Field::zeros(grid.clone())).unwrap();
        assert_eq!(a.values(), b.values());
        let (c, rc) = solve_chance(&spec, &cfg, &Field::from_fn(grid.clone(), |x| -2.0 * x[0])).unwrap();
        assert!(ra.converged() && rc.converged());
        let op = LaplacianOperator::new(grid.clone()).unwrap();
        let sample = sample_sphere::<f64>(6, 512, SphereMode::Qmc, 0).unwrap();
        let mid = a.plus_scaled(1.0, &c).scaled(0.5);
        let b = precompute_states(&spec, &op, &mid).unwrap();
        let est = estimate(&b, &spec.cov, spec.alpha, &sample, &op, SrdMode::Gaussian).unwrap();
        assert!(est.prob >= ra.prob.min(rc.prob) - 1e-6);
    }
}
