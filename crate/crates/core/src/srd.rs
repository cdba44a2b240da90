//! Spherical-radial decomposition of the probability
//! `φ(u) = P(ȳ_u(x) + Σ ξ_i y⁽ⁱ⁾(x) ≤ α for all nodes x)` and its gradient.
//!
//! Along a ray `z = r Σ^{1/2} v` the state is `ȳ + r κ_v` with
//! `κ_v(x) = Σ_i (Σ^{1/2} v)_i y⁽ⁱ⁾(x)`, so the constraint holds exactly for
//! `r ≤ ρ(v) = min_{κ_v(x) > 0} (α − ȳ(x)) / κ_v(x)`. The radius `‖ξ‖` in the
//! whitened coordinates is chi distributed with `m` degrees of freedom, hence
//!
//! ```text
//! φ(u) ≈ (1/K) Σ_k e(v_k),          e(v) = F_χ(ρ(v))   (1 when ρ = ∞)
//! ∇φ(u) ≈ −(1/K) Σ_{ρ_k < ∞} f_χ(ρ_k) / κ_k(x*_k) · g_{x*_k}
//! ```
//!
//! where `x*` attains the minimum ratio and `g_x` is the Green row of `x`.
//!
//! Truncation to the ellipsoid `zᵀΣ⁻¹z ≤ R²` conditions the Gaussian on the
//! support. On the ray above `zᵀΣ⁻¹z = r²`, so the joint event "constraint
//! holds and z in support" is `r ≤ min(ρ, R)` and
//! `e(v) = F_χ(min(ρ, R)) / F_χ(R)`. Rays with `ρ ≥ R` are locally constant in
//! `u` and contribute nothing to the gradient; the others are scaled by
//! `1 / F_χ(R)`. With `R = ∞` this is the untruncated formula.

use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{
    stream_rng, truncated_gaussian, ChiDistribution, CovarianceModel, SphereSample, SupportSpec,
};
use crate::error::{arg, Error, Result};
use crate::pde::{precompute_states, BasisStates, LaplacianOperator, StateBundle};
use crate::problem::{Field, ProblemSpec};
use crate::scalar::{count, lit, to_f64, Scalar};

/// Relative tolerance for declaring two nodes tied in the minimum ratio.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

/// Law of the noise seen by the probability estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SrdMode<T> {
    Gaussian,
    /// Gaussian conditioned on `zᵀΣ⁻¹z ≤ radius²`.
    Truncated { radius: T },
}

impl<T: Scalar> SrdMode<T> {
    /// Mode implied by a support description.
    pub fn for_support(support: &SupportSpec<T>) -> Self {
        match support.radius() {
            Some(radius) => SrdMode::Truncated { radius },
            None => SrdMode::Gaussian,
        }
    }

    fn radius(&self) -> T {
        match *self {
            SrdMode::Gaussian => T::infinity(),
            SrdMode::Truncated { radius } => radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialResult<T> {
    /// Largest admissible ray length, `+∞` when no node has `κ > 0`.
    pub rho: T,
    pub argmin_node: Option<usize>,
    pub kappa_at_argmin: T,
    /// Nodes whose ratio is within the tie tolerance of `rho`.
    pub tie_nodes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleDiagnostic<T> {
    pub rho: T,
    pub argmin_node: Option<usize>,
    pub n_ties: usize,
}

#[derive(Debug, Clone)]
pub struct SrdEstimate<T> {
    pub prob: T,
    /// L² Riesz representative of the (sub)gradient.
    pub grad: Field<T>,
    pub n_finite: usize,
    /// Fraction of finite-ρ directions whose minimum ratio is attained at 2+ nodes.
    pub tie_fraction: T,
    pub samples: Vec<SampleDiagnostic<T>>,
}

fn check_mean_state<T: Scalar>(mean: &[T], alpha: T) -> Result<()> {
    match mean.iter().position(|&y| !(y < alpha)) {
        None => Ok(()),
        Some(node) => Err(Error::StateConstraint {
            node,
            value: to_f64(mean[node]),
            alpha: to_f64(alpha),
        }),
    }
}

/// `κ_v(x_j) = Σ_i (Σ^{1/2} v)_i y⁽ⁱ⁾(x_j)` for every node.
pub fn kappa<T: Scalar>(basis: &BasisStates<T>, cov: &CovarianceModel<T>, v: &[T]) -> Vec<T> {
    let w = cov.apply_sqrt(v);
    (0..basis.f0_state().len())
        .map(|j| basis.combine_at(j, &w))
        .collect()
}

/// Minimum-ratio search over `(node, κ)` pairs with `κ > 0`.
fn min_ratio<T: Scalar>(
    mean: &[T],
    alpha: T,
    positive: impl Iterator<Item = (usize, T)> + Clone,
    tie_tol: T,
) -> RadialResult<T> {
    let mut rho = T::infinity();
    let mut arg = None;
    let mut kappa_at = T::zero();
    for (j, k) in positive.clone() {
        let r = (alpha - mean[j]) / k;
        if r < rho {
            rho = r;
            arg = Some(j);
            kappa_at = k;
        }
    }
    let tie_nodes = match arg {
        None => Vec::new(),
        Some(_) => {
            let cut = rho + tie_tol * (T::one() + rho.abs());
            positive
                .filter(|&(j, k)| (alpha - mean[j]) / k <= cut)
                .map(|(j, _)| j)
                .collect()
        }
    };
    RadialResult {
        rho,
        argmin_node: arg,
        kappa_at_argmin: kappa_at,
        tie_nodes,
    }
}

/// Radial bound `ρ(v)` and its minimizing node for one unit direction.
pub fn radial_bound<T: Scalar>(
    bundle: &StateBundle<T>,
    cov: &CovarianceModel<T>,
    alpha: T,
    v: &[T],
    tie_tol: T,
) -> Result<RadialResult<T>> {
    if v.len() != bundle.m() {
        return arg(format!("direction has length {}, expected {}", v.len(), bundle.m()));
    }
    let mean = bundle.mean_state.values();
    check_mean_state(mean, alpha)?;
    let k = kappa(bundle.basis(), cov, v);
    let positive = k
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > T::zero())
        .map(|(j, &x)| (j, x));
    Ok(min_ratio(mean, alpha, positive, tie_tol))
}

/// SRD estimator with the sphere sample frozen.
///
/// The basic states do not depend on the control, so the positive parts of
/// all `κ_k` are computed once; each evaluation then costs one pass over
/// them plus a single Poisson solve for the gradient.
#[derive(Debug, Clone)]
pub struct SrdEvaluator<T> {
    chi: ChiDistribution<T>,
    n_nodes: usize,
    positive: Vec<Vec<(u32, T)>>,
}

impl<T: Scalar> SrdEvaluator<T> {
    pub fn new(basis: &BasisStates<T>, cov: &CovarianceModel<T>, sample: &SphereSample<T>) -> Result<Self> {
        if sample.is_empty() {
            return arg("sphere sample is empty");
        }
        if sample.dim() != basis.m() || cov.dim() != basis.m() {
            return arg(format!(
                "sphere sample dimension {} and covariance dimension {} must equal m = {}",
                sample.dim(),
                cov.dim(),
                basis.m()
            ));
        }
        let positive = sample
            .dirs
            .par_iter()
            .map(|v| {
                kappa(basis, cov, v)
                    .into_iter()
                    .enumerate()
                    .filter(|&(_, k)| k > T::zero())
                    .map(|(j, k)| (j as u32, k))
                    .collect()
            })
            .collect();
        Ok(Self {
            chi: ChiDistribution::new(basis.m())?,
            n_nodes: basis.f0_state().len(),
            positive,
        })
    }

    pub fn sample_size(&self) -> usize {
        self.positive.len()
    }

    /// Per-direction radial results for a given mean state.
    pub fn radial_all(&self, mean: &[T], alpha: T, tie_tol: T) -> Result<Vec<RadialResult<T>>> {
        if mean.len() != self.n_nodes {
            return arg("mean state does not match the evaluator grid");
        }
        check_mean_state(mean, alpha)?;
        Ok(self
            .positive
            .par_iter()
            .map(|pos| min_ratio(mean, alpha, pos.iter().map(|&(j, k)| (j as usize, k)), tie_tol))
            .collect())
    }

    pub fn evaluate(
        &self,
        op: &LaplacianOperator<T>,
        mean_state: &Field<T>,
        alpha: T,
        mode: SrdMode<T>,
        tie_tol: T,
    ) -> Result<SrdEstimate<T>> {
        let radial = self.radial_all(mean_state.values(), alpha, tie_tol)?;
        let radius = mode.radius();
        let mass = self.chi.cdf(radius)?;
        if !(mass > T::zero()) {
            return arg(format!("truncation radius {radius} carries no probability mass"));
        }

        let terms = radial
            .par_iter()
            .map(|r| -> Result<(T, Option<(usize, T)>)> {
                if r.rho >= radius {
                    return Ok((T::one(), None));
                }
                let (pdf, cdf) = self.chi.eval(r.rho)?;
                let node = r.argmin_node.expect("finite rho has an argmin");
                Ok((cdf / mass, Some((node, pdf / (r.kappa_at_argmin * mass)))))
            })
            .collect::<Result<Vec<_>>>()?;

        let k = count::<T>(self.sample_size());
        let mut prob = T::zero();
        let mut weights = vec![T::zero(); self.n_nodes];
        for (e, w) in &terms {
            prob += *e;
            if let Some((node, c)) = w {
                weights[*node] += *c;
            }
        }
        prob = (prob / k).min(T::one()).max(T::zero());

        // Σ_k c_k g_{x_k} = A⁻¹(Σ_k c_k e_{x_k}) / w, one solve for all directions.
        op.solve_values(&mut weights);
        let scale = -T::one() / (k * mean_state.grid().quad_weight());
        weights.iter_mut().for_each(|g| *g *= scale);
        let grad = Field::new(mean_state.grid().clone(), weights)?;

        let n_finite = radial.iter().filter(|r| r.rho.is_finite()).count();
        let n_tied = radial
            .iter()
            .filter(|r| r.rho.is_finite() && r.tie_nodes.len() >= 2)
            .count();
        let tie_fraction = if n_finite == 0 {
            T::zero()
        } else {
            count::<T>(n_tied) / count::<T>(n_finite)
        };
        let samples = radial
            .iter()
            .map(|r| SampleDiagnostic {
                rho: r.rho,
                argmin_node: r.argmin_node,
                n_ties: r.tie_nodes.len(),
            })
            .collect();
        Ok(SrdEstimate {
            prob,
            grad,
            n_finite,
            tie_fraction,
            samples,
        })
    }
}

/// One-shot probability and gradient estimate at the control held by `bundle`.
pub fn estimate<T: Scalar>(
    bundle: &StateBundle<T>,
    cov: &CovarianceModel<T>,
    alpha: T,
    sample: &SphereSample<T>,
    op: &LaplacianOperator<T>,
    mode: SrdMode<T>,
) -> Result<SrdEstimate<T>> {
    SrdEvaluator::new(bundle.basis(), cov, sample)?.evaluate(
        op,
        &bundle.mean_state,
        alpha,
        mode,
        lit(DEFAULT_TIE_TOL),
    )
}

/// `⟨∇φ̂, h⟩` in discrete L².
pub fn directional_derivative<T: Scalar>(est: &SrdEstimate<T>, h: &Field<T>) -> Result<T> {
    est.grad.dot(h)
}

/// Share of finite-ρ directions with a non-unique minimizing node.
pub fn nondiff_fraction<T: Scalar>(est: &SrdEstimate<T>) -> T {
    est.tie_fraction
}

/// Plain Monte Carlo estimate of `P(max_x y ≤ α)` and its binomial standard error.
pub fn mc_probability_oracle<T: Scalar>(
    spec: &ProblemSpec<T>,
    op: &LaplacianOperator<T>,
    u: &Field<T>,
    n: usize,
    seed: u64,
    mode: SrdMode<T>,
) -> Result<(T, T)> {
    let bundle = precompute_states(spec, op, u)?;
    mc_probability(&bundle, &spec.cov, spec.alpha, n, seed, mode)
}

/// Same as [`mc_probability_oracle`] for precomputed states.
pub fn mc_probability<T: Scalar>(
    bundle: &StateBundle<T>,
    cov: &CovarianceModel<T>,
    alpha: T,
    n: usize,
    seed: u64,
    mode: SrdMode<T>,
) -> Result<(T, T)> {
    if n == 0 {
        return arg("Monte Carlo oracle needs at least one draw");
    }
    let support = match mode {
        SrdMode::Gaussian => SupportSpec::full_space(),
        SrdMode::Truncated { radius } => SupportSpec::ellipsoid(radius)?,
    };
    let mean = bundle.mean_state.values();
    let basis = bundle.basis();
    let hits = (0..n as u64)
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let mut rng = stream_rng(seed, i);
            let z = truncated_gaussian(cov, &support, &mut rng)?;
            let ok = (0..mean.len()).all(|j| mean[j] + basis.combine_at(j, &z) <= alpha);
            Ok(ok as usize)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let nn = count::<T>(n);
    let p = count::<T>(hits) / nn;
    Ok((p, (p * (T::one() - p) / nn).sqrt()))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::distributions::{sample_sphere, SphereMode};
    use crate::problem::{builtin_problem, BuiltinProblem, Grid};

    fn toy_bundle(n_cells: usize, mean: Vec<f64>, basic: Vec<Vec<f64>>) -> (StateBundle<f64>, LaplacianOperator<f64>) {
        let grid = Arc::new(Grid::new(1, n_cells).unwrap());
        let op = LaplacianOperator::new(grid.clone()).unwrap();
        let states = basic
            .into_iter()
            .map(|b| Field::new(grid.clone(), b).unwrap())
            .collect();
        let basis = Arc::new(BasisStates::from_states(Field::zeros(grid.clone()), states));
        let bundle = StateBundle::from_parts(
            Field::zeros(grid.clone()),
            Field::new(grid, mean).unwrap(),
            basis,
        );
        (bundle, op)
    }

    #[test]
    fn single_node_ratio() {
        let (bundle, _) = toy_bundle(2, vec![0.0], vec![vec![2.0]]);
        let cov = CovarianceModel::identity(1).unwrap();
        let r = radial_bound(&bundle, &cov, 0.2, &[1.0], 1e-9).unwrap();
        assert!((r.rho - 0.1).abs() < 1e-15);
        assert_eq!(r.argmin_node, Some(0));
        assert_eq!(r.kappa_at_argmin, 2.0);
        let r = radial_bound(&bundle, &cov, 0.2, &[-1.0], 1e-9).unwrap();
        assert!(r.rho.is_infinite());
        assert_eq!(r.argmin_node, None);
    }

    #[test]
    fn mean_state_at_threshold_is_rejected() {
        let (bundle, _) = toy_bundle(3, vec![0.0, 0.2], vec![vec![1.0, 1.0]]);
        let cov = CovarianceModel::identity(1).unwrap();
        assert!(matches!(
            radial_bound(&bundle, &cov, 0.2, &[1.0], 1e-9),
            Err(Error::StateConstraint { node: 1, .. })
        ));
    }

    #[test]
    fn vanishing_basic_states_give_certainty() {
        let (bundle, op) = toy_bundle(6, vec![0.0, 0.1, -0.3, 0.05, 0.0], vec![vec![0.0; 5]; 3]);
        let cov = CovarianceModel::identity(3).unwrap();
        let sample = sample_sphere(3, 64, SphereMode::Qmc, 0).unwrap();
        let est = estimate(&bundle, &cov, 0.2, &sample, &op, SrdMode::Gaussian).unwrap();
        assert_eq!(est.prob, 1.0);
        assert!(est.grad.values().iter().all(|&g| g == 0.0));
        assert_eq!(est.n_finite, 0);
        assert_eq!(nondiff_fraction(&est), 0.0);
        let r = radial_bound(&bundle, &cov, 0.2, &sample.dirs[0], 1e-9).unwrap();
        assert!(r.rho.is_infinite());
        let (p, se) = mc_probability(&bundle, &cov, 0.2, 500, 1, SrdMode::Gaussian).unwrap();
        assert_eq!((p, se), (1.0, 0.0));
    }

    #[test]
    fn symmetric_maxima_are_flagged_as_ties() {
        let (bundle, op) = toy_bundle(8, vec![0.0; 7], vec![vec![0.2, 0.7, 1.0, 0.6, 1.0, 0.7, 0.2]]);
        let cov = CovarianceModel::identity(1).unwrap();
        let sample = SphereSample {
            mode: SphereMode::Mc,
            seed: 0,
            dirs: vec![vec![1.0], vec![-1.0]],
        };
        let est = estimate(&bundle, &cov, 0.2, &sample, &op, SrdMode::Gaussian).unwrap();
        assert_eq!(est.n_finite, 1);
        assert_eq!(nondiff_fraction(&est), 1.0);
        // the first tied node is selected
        assert_eq!(est.samples[0].argmin_node, Some(2));
        assert_eq!(est.samples[0].n_ties, 2);
    }

    fn paper_setup() -> (ProblemSpec<f64>, LaplacianOperator<f64>, StateBundle<f64>) {
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap();
        let op = LaplacianOperator::new(spec.grid().unwrap()).unwrap();
        let u = Field::zeros(op.grid().clone());
        let bundle = precompute_states(&spec, &op, &u).unwrap();
        (spec, op, bundle)
    }

    #[test]
    fn radial_bound_matches_bisection() {
        let (spec, _, bundle) = paper_setup();
        let sample = sample_sphere::<f64>(6, 40, SphereMode::Mc, 4).unwrap();
        for v in &sample.dirs {
            let r = radial_bound(&bundle, &spec.cov, spec.alpha, v, 1e-9).unwrap();
            // oracle: bisection on r ↦ max_x S(u, r Σ^{1/2} v)(x) − α
            let w = spec.cov.apply_sqrt(v);
            let excess = |t: f64| {
                let z: Vec<f64> = w.iter().map(|x| t * x).collect();
                bundle.superpose(&z).unwrap().max() - spec.alpha
            };
            if excess(1e6) <= 0.0 {
                assert!(r.rho.is_infinite());
                continue;
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            while excess(hi) <= 0.0 {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if excess(mid) <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((r.rho - lo).abs() < 1e-8, "{} vs {}", r.rho, lo);
            let j = r.argmin_node.unwrap();
            let at = bundle.mean_state.values()[j] + r.rho * r.kappa_at_argmin;
            assert!((at - spec.alpha).abs() < 1e-9);
        }
    }

    #[test]
    fn truncation_at_infinity_is_the_gaussian_mode() {
        let (spec, op, bundle) = paper_setup();
        let sample = sample_sphere::<f64>(6, 256, SphereMode::Qmc, 0).unwrap();
        let g = estimate(&bundle, &spec.cov, spec.alpha, &sample, &op, SrdMode::Gaussian).unwrap();
        let t = estimate(
            &bundle,
            &spec.cov,
            spec.alpha,
            &sample,
            &op,
            SrdMode::Truncated { radius: f64::INFINITY },
        )
        .unwrap();
        assert_eq!(g.prob, t.prob);
        assert_eq!(g.grad.values(), t.grad.values());
    }

    #[test]
    fn gradient_is_nonpositive_and_zero_direction_is_zero() {
        let (spec, op, bundle) = paper_setup();
        let sample = sample_sphere::<f64>(6, 512, SphereMode::Qmc, 0).unwrap();
        let est = estimate(&bundle, &spec.cov, spec.alpha, &sample, &op, SrdMode::Gaussian).unwrap();
        assert!(est.grad.values().iter().all(|&g| g <= 0.0));
        assert!(est.prob > 0.0 && est.prob < 1.0);
        let zero = Field::zeros(op.grid().clone());
        assert_eq!(directional_derivative(&est, &zero).unwrap(), 0.0);
        let pos = Field::from_fn(op.grid().clone(), |x| 1.0 + x[0]);
        assert!(directional_derivative(&est, &pos).unwrap() <= 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (spec, op, bundle) = paper_setup();
        let sample = sample_sphere::<f64>(6, 512, SphereMode::Qmc, 0).unwrap();
        let eval = SrdEvaluator::new(bundle.basis(), &spec.cov, &sample).unwrap();
        let u = Field::from_fn(op.grid().clone(), |x| -1.5 * (std::f64::consts::PI * x[0]).sin());
        let b = bundle.with_control(&op, &u).unwrap();
        let est = eval.evaluate(&op, &b.mean_state, spec.alpha, SrdMode::Gaussian, 1e-9).unwrap();
        assert_eq!(est.tie_fraction, 0.0);
        for (i, h) in [
            Field::from_fn(op.grid().clone(), |x| (2.0 * x[0]).cos()),
            Field::from_fn(op.grid().clone(), |x| x[0] * x[0] - 0.3),
        ]
        .iter()
        .enumerate()
        {
            let step = 1e-4 / h.norm();
            let p = |t: f64| {
                let b = bundle.with_control(&op, &u.plus_scaled(t, h)).unwrap();
                eval.evaluate(&op, &b.mean_state, spec.alpha, SrdMode::Gaussian, 1e-9)
                    .unwrap()
                    .prob
            };
            let fd = (p(step) - p(-step)) / (2.0 * step);
            let an = directional_derivative(&est, h).unwrap();
            assert!((fd - an).abs() <= 1e-3 * an.abs(), "direction {i}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn srd_agrees_with_monte_carlo_at_zero_control() {
        let (spec, op, bundle) = paper_setup();
        let sample = sample_sphere::<f64>(6, 65536, SphereMode::Mc, 1).unwrap();
        let est = estimate(&bundle, &spec.cov, spec.alpha, &sample, &op, SrdMode::Gaussian).unwrap();
        let (p, se) = mc_probability(&bundle, &spec.cov, spec.alpha, 100_000, 7, SrdMode::Gaussian).unwrap();
        assert!((est.prob - p).abs() <= 3.0 * se, "srd {} mc {} se {}", est.prob, p, se);
    }

    #[test]
    fn huge_threshold_is_certain_for_monte_carlo() {
        let (spec, op, _) = paper_setup();
        let u = Field::zeros(op.grid().clone());
        let (p, _) = mc_probability_oracle(&spec, &op, &u, 1000, 3, SrdMode::Gaussian).unwrap();
        assert!(p < 1.0);
        let mut loose = spec.clone();
        loose.alpha = 1e6;
        let (p, se) = mc_probability_oracle(&loose, &op, &u, 1000, 3, SrdMode::Gaussian).unwrap();
        assert_eq!((p, se), (1.0, 0.0));
    }

    struct Shared {
        spec: ProblemSpec<f64>,
        op: LaplacianOperator<f64>,
        base: StateBundle<f64>,
        eval: SrdEvaluator<f64>,
    }

    fn shared() -> &'static Shared {
        static CELL: std::sync::OnceLock<Shared> = std::sync::OnceLock::new();
        CELL.get_or_init(|| {
            let spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap().with_cells(40);
            let op = LaplacianOperator::new(spec.grid().unwrap()).unwrap();
            let base = precompute_states(&spec, &op, &Field::zeros(op.grid().clone())).unwrap();
            let sample = sample_sphere::<f64>(6, 256, SphereMode::Qmc, 3).unwrap();
            let eval = SrdEvaluator::new(base.basis(), &spec.cov, &sample).unwrap();
            Shared { spec, op, base, eval }
        })
    }

    fn shared_prob(u: &Field<f64>) -> f64 {
        let s = shared();
        let b = s.base.with_control(&s.op, u).unwrap();
        s.eval
            .evaluate(&s.op, &b.mean_state, s.spec.alpha, SrdMode::Gaussian, 1e-9)
            .unwrap()
            .prob
    }

    fn control(c: &[f64]) -> Field<f64> {
        let (a, b, d) = (c[0], c[1], c[2]);
        Field::from_fn(shared().op.grid().clone(), move |x| a + b * (3.0 * x[0]).sin() + d * x[0])
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]

        #[test]
        fn monotone_along_nonnegative_directions(
            c in proptest::collection::vec(-2.0f64..0.0, 3),
            h in proptest::collection::vec(0.0f64..1.0, 3),
            t in 0.0f64..1.0,
        ) {
            let u = control(&c);
            // nonnegative combination of nonnegative functions on (0, 1)
            let dir = Field::from_fn(shared().op.grid().clone(), |x| h[0] + h[1] * x[0] + h[2] * x[0] * x[0]);
            let v = u.plus_scaled(t, &dir);
            let b = shared().base.with_control(&shared().op, &v).unwrap();
            proptest::prop_assume!(b.mean_state.max() < shared().spec.alpha);
            proptest::prop_assert!(shared_prob(&v) <= shared_prob(&u));
        }

        #[test]
        fn quasi_concave(
            c1 in proptest::collection::vec(-3.0f64..0.0, 3),
            c2 in proptest::collection::vec(-3.0f64..0.0, 3),
            lam in 0.0f64..1.0,
        ) {
            let (u1, u2) = (control(&c1), control(&c2));
            let mid = u1.scaled(lam).plus_scaled(1.0 - lam, &u2);
            for u in [&u1, &u2] {
                let b = shared().base.with_control(&shared().op, u).unwrap();
                proptest::prop_assume!(b.mean_state.max() < shared().spec.alpha);
            }
            let lo = shared_prob(&u1).min(shared_prob(&u2));
            proptest::prop_assert!(shared_prob(&mid) >= lo - 1e-9);
        }

        #[test]
        fn gradient_is_nonpositive(c in proptest::collection::vec(-3.0f64..0.0, 3)) {
            let s = shared();
            let u = control(&c);
            let b = s.base.with_control(&s.op, &u).unwrap();
            proptest::prop_assume!(b.mean_state.max() < s.spec.alpha);
            let est = s.eval.evaluate(&s.op, &b.mean_state, s.spec.alpha, SrdMode::Gaussian, 1e-9).unwrap();
            proptest::prop_assert!(est.grad.values().iter().all(|&g| g <= 0.0));
            proptest::prop_assert!((0.0..=1.0).contains(&est.prob));
        }
    }
}
