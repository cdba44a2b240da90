//! Sample average Moreau–Yosida penalty for the almost-sure state constraint.
//!
//! ```text
//! f^γ(u) = ‖u‖² + (γ/N) Σ_i ‖(y_i − α)_+‖²,    y_i = S(u, z_i)
//! ∇f^γ(u) = 2u − (1/N) Σ_i p_i,                −Δp_i = −2γ (y_i − α)_+
//! ```
//!
//! The adjoints enter linearly, so their average is obtained from one solve
//! with the averaged right-hand side.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_support_with_law, RadialLaw, SupportScheme};
use crate::error::{arg, Error, Result};
use crate::pde::{precompute_states, BasisStates, LaplacianOperator};
use crate::problem::{Field, ProblemSpec};
use crate::robust::robust_eval;
use crate::scalar::{count, lit, Scalar};

const SCENARIO_CHUNK: usize = 256;

/// Frozen scenario set for one penalty level.
#[derive(Debug, Clone)]
pub struct SaaObjective<T> {
    basis: Arc<BasisStates<T>>,
    /// `Σ_k z_ik y⁽ᵏ⁾` per scenario, row-major `N × n`.
    shifts: Vec<T>,
    n_scen: usize,
    alpha: T,
    gamma: T,
}

impl<T: Scalar> SaaObjective<T> {
    pub fn new(basis: Arc<BasisStates<T>>, scenarios: &[Vec<T>], alpha: T, gamma: T) -> Result<Self> {
        if scenarios.is_empty() {
            return arg("at least one scenario is required");
        }
        if !(gamma >= T::zero()) {
            return arg(format!("penalty parameter must be nonnegative, got {gamma}"));
        }
        if let Some(z) = scenarios.iter().find(|z| z.len() != basis.m()) {
            return arg(format!("scenario has length {}, expected {}", z.len(), basis.m()));
        }
        let n = basis.f0_state().len();
        let shifts = scenarios
            .par_iter()
            .flat_map_iter(|z| (0..n).map(|j| basis.combine_at(j, z)).collect::<Vec<_>>())
            .collect();
        Ok(Self {
            basis,
            shifts,
            n_scen: scenarios.len(),
            alpha,
            gamma,
        })
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn n_scenarios(&self) -> usize {
        self.n_scen
    }

    pub fn with_gamma(&self, gamma: T) -> Self {
        Self { gamma, ..self.clone() }
    }

    /// Penalty sum `Σ_i ‖(y_i − α)_+‖²_w` and the nodal sum of the residuals.
    fn penalty(&self, mean: &[T], w: T, want_grad: bool) -> (T, Vec<T>) {
        let n = mean.len();
        let partial: Vec<(T, Vec<T>)> = self
            .shifts
            .par_chunks(SCENARIO_CHUNK * n)
            .map(|chunk| {
                let mut pen = T::zero();
                let mut acc = if want_grad { vec![T::zero(); n] } else { Vec::new() };
                for row in chunk.chunks(n) {
                    for j in 0..n {
                        let r = mean[j] + row[j] - self.alpha;
                        if r > T::zero() {
                            pen += r * r;
                            if want_grad {
                                acc[j] += r;
                            }
                        }
                    }
                }
                (pen * w, acc)
            })
            .collect();
        let mut pen = T::zero();
        let mut acc = vec![T::zero(); if want_grad { n } else { 0 }];
        for (p, a) in partial {
            pen += p;
            acc.iter_mut().zip(a).for_each(|(x, y)| *x += y);
        }
        (pen, acc)
    }

    fn mean_state(&self, op: &LaplacianOperator<T>, u: &Field<T>) -> Result<Vec<T>> {
        u.check_same_grid(self.basis.f0_state())?;
        let mut y = u.values().to_vec();
        op.solve_values(&mut y);
        y.iter_mut()
            .zip(self.basis.f0_state().values())
            .for_each(|(a, &b)| *a += b);
        Ok(y)
    }

    pub fn value(&self, op: &LaplacianOperator<T>, u: &Field<T>) -> Result<T> {
        let mean = self.mean_state(op, u)?;
        let (pen, _) = self.penalty(&mean, u.grid().quad_weight(), false);
        Ok(u.norm_sq() + self.gamma / count::<T>(self.n_scen) * pen)
    }

    pub fn value_grad(&self, op: &LaplacianOperator<T>, u: &Field<T>) -> Result<(T, Field<T>)> {
        let mean = self.mean_state(op, u)?;
        let (pen, mut resid) = self.penalty(&mean, u.grid().quad_weight(), true);
        let scale = self.gamma / count::<T>(self.n_scen);
        // −(1/N) Σ p_i = (2γ/N) A⁻¹ Σ (y_i − α)_+
        op.solve_values(&mut resid);
        let two = lit::<T>(2.0);
        let grad: Vec<T> = u
            .values()
            .iter()
            .zip(&resid)
            .map(|(&ui, &ri)| two * ui + two * scale * ri)
            .collect();
        Ok((u.norm_sq() + scale * pen, Field::new(u.grid().clone(), grad)?))
    }
}

/// Value and L² gradient of the sampled penalty objective.
pub fn saa_value_grad<T: Scalar>(
    spec: &ProblemSpec<T>,
    op: &LaplacianOperator<T>,
    u: &Field<T>,
    scenarios: &[Vec<T>],
    gamma: T,
) -> Result<(T, Field<T>)> {
    let bundle = precompute_states(spec, op, u)?;
    SaaObjective::new(bundle.basis().clone(), scenarios, spec.alpha, gamma)?.value_grad(op, u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule<T> {
    /// `t_ℓ = c/ℓ`
    Diminishing { c: T },
    /// `t_ℓ = c/ℓ`, halved until the Armijo condition holds.
    Armijo { c: T },
    /// Barzilai–Borwein steps with a nonmonotone Armijo test; first step `c`.
    BarzilaiBorwein { c: T },
}

impl<T: Scalar> Default for StepRule<T> {
    fn default() -> Self {
        StepRule::Diminishing { c: lit(4.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathSchedule<T> {
    /// Penalty levels `k = 0..=k_max`.
    pub k_max: usize,
    /// `γ_k = gamma_base^k`
    pub gamma_base: T,
    /// `N_k = size_base^k`
    pub size_base: usize,
    pub step: StepRule<T>,
    pub tol: T,
    pub max_inner: usize,
    pub scheme: SupportScheme,
    pub radial_law: RadialLaw,
    pub seed: u64,
}

impl<T: Scalar> PathSchedule<T> {
    /// `γ_k = 10^k`, `N_k = 3^k` for `k = 0..=8`, step `4/ℓ`, tolerance `1e-4`.
    pub fn reference(scheme: SupportScheme, seed: u64) -> Self {
        Self {
            k_max: 8,
            gamma_base: lit(10.0),
            size_base: 3,
            step: StepRule::default(),
            tol: lit(1e-4),
            max_inner: 100_000,
            scheme,
            radial_law: RadialLaw::Linear,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_base >= T::one()) {
            return Err(Error::Configuration("gamma_base must be at least 1 so that γ_k is nondecreasing".into()));
        }
        if self.size_base == 0 {
            return Err(Error::Configuration("size_base must be positive".into()));
        }
        if !(self.tol > T::zero()) || self.max_inner == 0 {
            return Err(Error::Configuration("tol and max_inner must be positive".into()));
        }
        let c = match self.step {
            StepRule::Diminishing { c } | StepRule::Armijo { c } | StepRule::BarzilaiBorwein { c } => c,
        };
        if !(c > T::zero()) {
            return Err(Error::Configuration("step constant must be positive".into()));
        }
        Ok(())
    }

    pub fn gamma(&self, k: usize) -> T {
        self.gamma_base.powi(k as i32)
    }

    pub fn n_scenarios(&self, k: usize) -> usize {
        self.size_base.pow(k as u32)
    }

    /// Seed of the scenario draw at level `k`.
    pub fn level_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_add((k as u64) << 40)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InnerResult<T> {
    pub iterations: usize,
    pub value_entry: T,
    pub value: T,
    pub grad_norm: T,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathLevel<T> {
    pub k: usize,
    pub gamma: T,
    pub n_scenarios: usize,
    pub inner: InnerResult<T>,
    /// `max(0, h(u))` over the support; absent for an unbounded support.
    pub violation: Option<T>,
    #[serde(skip)]
    pub control: Field<T>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathTrace<T> {
    pub scheme: SupportScheme,
    pub levels: Vec<PathLevel<T>>,
    pub converged: bool,
}

/// Gradient descent on one frozen penalty problem until `‖∇f‖ < tol`.
pub fn descend<T: Scalar>(
    obj: &SaaObjective<T>,
    op: &LaplacianOperator<T>,
    u0: &Field<T>,
    step: StepRule<T>,
    tol: T,
    max_iter: usize,
) -> Result<(Field<T>, InnerResult<T>)> {
    const SIGMA: f64 = 1e-4;
    const MEMORY: usize = 10;
    let sigma = lit::<T>(SIGMA);
    let mut u = u0.clone();
    let (mut f, mut g) = obj.value_grad(op, &u)?;
    let f_entry = f;
    let mut history = vec![f];
    let mut prev: Option<(Field<T>, Field<T>)> = None;
    let mut it = 0;
    while it < max_iter {
        let gn2 = g.norm_sq();
        if gn2.sqrt() < tol {
            break;
        }
        if !f.is_finite() {
            return Err(Error::NonConvergence(format!("penalty objective diverged after {it} steps")));
        }
        it += 1;
        let l = count::<T>(it);
        let (u_new, f_new, g_new) = match step {
            StepRule::Diminishing { c } => {
                let u_new = u.plus_scaled(-c / l, &g);
                let (f_new, g_new) = obj.value_grad(op, &u_new)?;
                (u_new, f_new, g_new)
            }
            StepRule::Armijo { c } => {
                let mut t = c / l;
                let mut u_new = u.plus_scaled(-t, &g);
                let mut f_new = obj.value(op, &u_new)?;
                for _ in 0..200 {
                    if f_new <= f - sigma * t * gn2 {
                        break;
                    }
                    t = t / lit(2.0);
                    u_new = u.plus_scaled(-t, &g);
                    f_new = obj.value(op, &u_new)?;
                }
                let (f_new, g_new) = obj.value_grad(op, &u_new)?;
                (u_new, f_new, g_new)
            }
            StepRule::BarzilaiBorwein { c } => {
                let mut t = match &prev {
                    None => c,
                    Some((du, dg)) => {
                        let sy = du.dot_unchecked(dg);
                        let ss = du.norm_sq();
                        if sy > T::zero() {
                            (ss / sy).max(lit(1e-14)).min(lit(1e14))
                        } else {
                            c
                        }
                    }
                };
                let f_ref = history.iter().rev().take(MEMORY).copied().fold(T::neg_infinity(), T::max);
                let mut u_new = u.plus_scaled(-t, &g);
                let mut f_new = obj.value(op, &u_new)?;
                for _ in 0..200 {
                    if f_new <= f_ref - sigma * t * gn2 {
                        break;
                    }
                    t = t / lit(2.0);
                    u_new = u.plus_scaled(-t, &g);
                    f_new = obj.value(op, &u_new)?;
                }
                let (f_new, g_new) = obj.value_grad(op, &u_new)?;
                prev = Some((u_new.plus_scaled(-T::one(), &u), g_new.plus_scaled(-T::one(), &g)));
                (u_new, f_new, g_new)
            }
        };
        u = u_new;
        f = f_new;
        g = g_new;
        history.push(f);
    }
    let grad_norm = g.norm();
    Ok((
        u,
        InnerResult {
            iterations: it,
            value_entry: f_entry,
            value: f,
            grad_norm,
            converged: grad_norm < tol,
        },
    ))
}

/// Path following over `γ_k`, `N_k` with warm starts.
///
/// Inner iteration caps are recorded per level (`converged = false`) and the
/// path continues; the overall `converged` flag is the conjunction.
pub fn path_follow<T: Scalar>(
    spec: &ProblemSpec<T>,
    op: &LaplacianOperator<T>,
    sched: &PathSchedule<T>,
    u0: &Field<T>,
) -> Result<(Field<T>, PathTrace<T>)> {
    sched.validate()?;
    let bundle = precompute_states(spec, op, u0)?;
    let basis = bundle.basis().clone();
    let radius = spec.support_radius();
    let mut u = u0.clone();
    let mut levels = Vec::with_capacity(sched.k_max + 1);
    for k in 0..=sched.k_max {
        let n = sched.n_scenarios(k);
        let scenarios = sample_support_with_law(
            &spec.cov,
            &spec.support,
            n,
            sched.scheme,
            sched.level_seed(k),
            sched.radial_law,
        )?;
        let obj = SaaObjective::new(basis.clone(), &scenarios, spec.alpha, sched.gamma(k))?;
        let (u_k, inner) = descend(&obj, op, &u, sched.step, sched.tol, sched.max_inner)?;
        u = u_k;
        let violation = match radius {
            Some(r) => {
                let b = bundle.with_control(op, &u)?;
                Some(robust_eval(&b, &spec.cov, r, spec.alpha, lit(1e-8))?.h_value.max(T::zero()))
            }
            None => None,
        };
        levels.push(PathLevel {
            k,
            gamma: sched.gamma(k),
            n_scenarios: n,
            inner,
            violation,
            control: u.clone(),
        });
    }
    let converged = levels.iter().all(|l| l.inner.converged);
    Ok((
        u,
        PathTrace {
            scheme: sched.scheme,
            levels,
            converged,
        },
    ))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::distributions::{sample_support, SupportSpec};
    use crate::problem::{builtin_problem, BuiltinProblem};

    fn setup(n_cells: usize) -> (ProblemSpec<f64>, LaplacianOperator<f64>, Arc<BasisStates<f64>>) {
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1dTruncated)
            .unwrap()
            .with_cells(n_cells);
        let op = LaplacianOperator::new(spec.grid().unwrap()).unwrap();
        let basis = Arc::new(BasisStates::new(&spec, &op).unwrap());
        (spec, op, basis)
    }

    fn scenarios(spec: &ProblemSpec<f64>, n: usize, seed: u64) -> Vec<Vec<f64>> {
        sample_support(&spec.cov, &spec.support, n, SupportScheme::Distribution, seed).unwrap()
    }

    fn random_u(op: &LaplacianOperator<f64>, rng: &mut ChaCha8Rng) -> Field<f64> {
        let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        Field::from_fn(op.grid().clone(), |x| a[0] + a[1] * (4.0 * x[0]).cos() + a[2] * x[0])
    }

    #[test]
    fn zero_penalty_is_the_pure_objective() {
        let (spec, op, _) = setup(29);
        let u = Field::from_fn(op.grid().clone(), |x| x[0].sin());
        let (v, g) = saa_value_grad(&spec, &op, &u, &scenarios(&spec, 5, 1), 0.0).unwrap();
        assert_eq!(v, u.norm_sq());
        assert_eq!(g.values(), u.scaled(2.0).values());
    }

    #[test]
    fn inactive_penalty_is_the_pure_objective() {
        let (spec, op, _) = setup(29);
        let u = Field::constant(op.grid().clone(), -1e4);
        let (v, g) = saa_value_grad(&spec, &op, &u, &scenarios(&spec, 5, 1), 1e3).unwrap();
        assert_eq!(v, u.norm_sq());
        assert_eq!(g.values(), u.scaled(2.0).values());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (spec, op, basis) = setup(29);
        let obj = SaaObjective::new(basis, &scenarios(&spec, 3, 2), spec.alpha, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let u = random_u(&op, &mut rng);
            let h = random_u(&op, &mut rng);
            let (_, g) = obj.value_grad(&op, &u).unwrap();
            let e = 1e-6;
            let fd = (obj.value(&op, &u.plus_scaled(e, &h)).unwrap() - obj.value(&op, &u.plus_scaled(-e, &h)).unwrap())
                / (2.0 * e);
            let an = g.dot(&h).unwrap();
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-8), "{fd} vs {an}");
        }
    }

    #[test]
    fn convex_and_monotone_in_gamma() {
        let (spec, op, basis) = setup(29);
        let obj = SaaObjective::new(basis, &scenarios(&spec, 9, 3), spec.alpha, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let u1 = random_u(&op, &mut rng);
            let u2 = random_u(&op, &mut rng);
            let mid = u1.plus_scaled(1.0, &u2).scaled(0.5);
            let f = |u: &Field<f64>| obj.value(&op, u).unwrap();
            assert!(f(&mid) <= 0.5 * (f(&u1) + f(&u2)) + 1e-9);
            let mut last = f64::NEG_INFINITY;
            for g in [0.0, 0.1, 1.0, 10.0, 1e3] {
                let v = obj.with_gamma(g).value(&op, &u1).unwrap();
                assert!(v >= last);
                last = v;
            }
        }
    }

    #[test]
    fn single_level_without_penalty_reaches_zero() {
        let (spec, op, _) = setup(29);
        let sched = PathSchedule {
            k_max: 0,
            gamma_base: 10.0,
            size_base: 3,
            ..PathSchedule::reference(SupportScheme::Distribution, 0)
        };
        // γ_0 = 1 here; drop the penalty with a huge threshold
        let mut loose = spec.clone();
        loose.alpha = 1e6;
        let u0 = Field::constant(op.grid().clone(), -1.0);
        let (u, trace) = path_follow(&loose, &op, &sched, &u0).unwrap();
        assert!(trace.converged);
        assert!(u.norm() < 1e-4);
        assert_eq!(trace.levels[0].violation, Some(0.0));
    }

    #[test]
    fn diminishing_steps_do_not_increase_the_value() {
        let (spec, op, basis) = setup(29);
        let obj = SaaObjective::new(basis, &scenarios(&spec, 9, 4), spec.alpha, 10.0).unwrap();
        let u0 = Field::constant(op.grid().clone(), -1.0);
        let (_, res) = descend(&obj, &op, &u0, StepRule::Diminishing { c: 4.0 }, 1e-4, 100_000).unwrap();
        assert!(res.converged);
        assert!(res.value <= res.value_entry);
    }

    /// One scenario on 8 intervals against a dense fixed-step descent.
    #[test]
    fn matches_dense_penalized_problem() {
        let (spec, op, basis) = setup(8);
        let z = scenarios(&spec, 1, 9);
        let gamma = 100.0;
        let obj = SaaObjective::new(basis.clone(), &z, spec.alpha, gamma).unwrap();
        let u0 = Field::constant(op.grid().clone(), -1.0);
        let (u, res) = descend(&obj, &op, &u0, StepRule::BarzilaiBorwein { c: 1.0 }, 1e-10, 100_000).unwrap();
        assert!(res.converged);

        let n = op.grid().len();
        let g = op.inverse();
        let d: Vec<f64> = (0..n).map(|j| basis.f0_state().values()[j] + basis.combine_at(j, &z[0])).collect();
        // L ≤ 2 + 2γ‖G‖², with ‖G‖ ≤ 1/8
        let t = 1.0 / (2.0 + 2.0 * gamma / 64.0);
        let mut v = vec![-1.0; n];
        for _ in 0..200_000 {
            let r: Vec<f64> = (0..n)
                .map(|j| ((0..n).map(|l| g[j * n + l] * v[l]).sum::<f64>() + d[j] - spec.alpha).max(0.0))
                .collect();
            let grad: Vec<f64> = (0..n)
                .map(|j| 2.0 * v[j] + 2.0 * gamma * (0..n).map(|l| g[j * n + l] * r[l]).sum::<f64>())
                .collect();
            v.iter_mut().zip(&grad).for_each(|(a, b)| *a -= t * b);
        }
        let want = Field::new(op.grid().clone(), v).unwrap();
        assert!(u.distance(&want).unwrap() < 1e-3);
    }

    #[test]
    fn rejects_bad_schedules() {
        let mut s = PathSchedule::<f64>::reference(SupportScheme::Boundary, 0);
        s.gamma_base = 0.5;
        assert!(s.validate().is_err());
        let mut s = PathSchedule::<f64>::reference(SupportScheme::Boundary, 0);
        s.size_base = 0;
        assert!(s.validate().is_err());
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap();
        let op = LaplacianOperator::new(spec.grid().unwrap()).unwrap();
        let s = PathSchedule { k_max: 0, ..PathSchedule::reference(SupportScheme::Boundary, 0) };
        let u0 = Field::constant(op.grid().clone(), -1.0);
        assert!(path_follow(&spec, &op, &s, &u0).is_err());
        assert!(SupportSpec::<f64>::ellipsoid(-1.0).is_err());
    }
}
