//! Almost-sure state constraint on an ellipsoidal support, solved without samples.
//!
//! For a node `x` with basic-state coefficients `c(x) = (y⁽ⁱ⁾(x))ᵢ` the inner
//! maximization over `zᵀΣ⁻¹z ≤ R²` is explicit:
//! `H(u, x) = ȳ_u(x) + R √(c(x)ᵀ Σ c(x))`, attained at `z* = R Σc / √(cᵀΣc)`.
//! `H` is affine in `u`, so `min ‖u‖² s.t. H(u, x_j) ≤ α` is a QP with one
//! linear constraint per node.

use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::CovarianceModel;
use crate::error::{arg, Error, Result};
use crate::linalg::DenseCholesky;
use crate::pde::{precompute_states, BasisStates, LaplacianOperator, StateBundle};
use crate::problem::{Field, Grid, ProblemSpec};
use crate::scalar::{count, lit, Scalar};

/// Maximizer of `cᵀz` over `zᵀΣ⁻¹z ≤ R²`. Returns `0` when `c = 0`.
pub fn worst_case_z<T: Scalar>(cov: &CovarianceModel<T>, radius: T, c: &[T]) -> Vec<T> {
    let sc = cov.sigma_mul(c);
    let q: T = sc.iter().zip(c).map(|(&a, &b)| a * b).sum();
    if !(q > T::zero()) {
        return vec![T::zero(); c.len()];
    }
    let s = radius / q.sqrt();
    sc.into_iter().map(|x| x * s).collect()
}

/// `R √(c(x_j)ᵀ Σ c(x_j))` for every node; independent of the control.
pub fn robust_offsets<T: Scalar>(basis: &BasisStates<T>, cov: &CovarianceModel<T>, radius: T) -> Vec<T> {
    (0..basis.f0_state().len())
        .into_par_iter()
        .map(|j| radius * cov.quad_form(basis.node_coeffs(j)).max(T::zero()).sqrt())
        .collect()
}

#[derive(Debug, Clone)]
pub struct RobustEval<T> {
    /// `max_x H(u, x) − α`
    pub h_value: T,
    pub active_nodes: Vec<usize>,
    /// `H(u, x_j)` per node.
    pub node_values: Vec<T>,
    pub worst_z_per_node: Vec<Vec<T>>,
}

pub fn robust_eval<T: Scalar>(
    bundle: &StateBundle<T>,
    cov: &CovarianceModel<T>,
    radius: T,
    alpha: T,
    tie_tol: T,
) -> Result<RobustEval<T>> {
    if !(radius >= T::zero()) {
        return arg(format!("support radius must be nonnegative, got {radius}"));
    }
    let basis = bundle.basis();
    let offsets = robust_offsets(basis, cov, radius);
    let mut ev = eval_from_offsets(bundle.mean_state.values(), &offsets, alpha, tie_tol);
    ev.worst_z_per_node = (0..offsets.len())
        .into_par_iter()
        .map(|j| worst_case_z(cov, radius, basis.node_coeffs(j)))
        .collect();
    Ok(ev)
}

fn eval_from_offsets<T: Scalar>(mean: &[T], offsets: &[T], alpha: T, tie_tol: T) -> RobustEval<T> {
    let node_values: Vec<T> = mean.iter().zip(offsets).map(|(&y, &o)| y + o).collect();
    let top = node_values.iter().copied().fold(T::neg_infinity(), T::max);
    let cut = top - tie_tol * (T::one() + top.abs());
    let active_nodes = (0..node_values.len()).filter(|&j| node_values[j] >= cut).collect();
    RobustEval {
        h_value: top - alpha,
        active_nodes,
        node_values,
        worst_z_per_node: Vec::new(),
    }
}

/// Subgradient of `h` at the evaluated control: the Green row of the first active node.
pub fn robust_subgradient<T: Scalar>(op: &LaplacianOperator<T>, ev: &RobustEval<T>) -> Result<Field<T>> {
    op.green_row(ev.active_nodes[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustMethod {
    /// Active-set solve of the nonnegative dual QP.
    ActiveSet,
    /// Switching subgradient descent, for cross-checks.
    Subgradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustConfig<T> {
    pub method: RobustMethod,
    pub max_iter: usize,
    pub kkt_tol: T,
    pub tie_tol: T,
    /// Initial step of the subgradient method, decayed as `1/√k`.
    pub subgradient_step: T,
}

impl<T: Scalar> Default for RobustConfig<T> {
    fn default() -> Self {
        Self {
            method: RobustMethod::ActiveSet,
            max_iter: 10_000,
            kkt_tol: lit(1e-6),
            tie_tol: lit(1e-8),
            subgradient_step: lit(1.0),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustReport<T> {
    pub method: RobustMethod,
    pub objective: T,
    pub h_value: T,
    pub kkt_residual: T,
    pub iterations: usize,
    pub active_nodes: Vec<usize>,
    /// Node multipliers (zero for the subgradient method).
    pub multipliers: Vec<T>,
    pub converged: bool,
}

pub fn solve_robust<T: Scalar>(spec: &ProblemSpec<T>, cfg: &RobustConfig<T>) -> Result<(Field<T>, RobustReport<T>)> {
    let op = LaplacianOperator::new(spec.grid()?)?;
    solve_robust_with(spec, &op, cfg)
}

pub fn solve_robust_with<T: Scalar>(
    spec: &ProblemSpec<T>,
    op: &LaplacianOperator<T>,
    cfg: &RobustConfig<T>,
) -> Result<(Field<T>, RobustReport<T>)> {
    let radius = spec.support_radius().ok_or_else(|| {
        Error::Configuration(format!("problem '{}' has no ellipsoidal support", spec.name))
    })?;
    if cfg.max_iter == 0 || !(cfg.kkt_tol > T::zero()) || !(cfg.tie_tol >= T::zero()) {
        return arg("robust solver needs max_iter > 0, kkt_tol > 0 and tie_tol >= 0");
    }
    let grid = op.grid().clone();
    let zero = Field::zeros(grid.clone());
    let bundle = precompute_states(spec, op, &zero)?;
    let offsets = robust_offsets(bundle.basis(), &spec.cov, radius);
    // constraint j: (A⁻¹u)_j ≤ b_j
    let b: Vec<T> = (0..grid.len())
        .map(|j| spec.alpha - bundle.mean_state.values()[j] - offsets[j])
        .collect();
    match cfg.method {
        RobustMethod::ActiveSet => active_set(op, &bundle, &offsets, &b, spec.alpha, cfg),
        RobustMethod::Subgradient => subgradient(op, &bundle, &offsets, spec.alpha, cfg),
    }
}

fn active_set<T: Scalar>(
    op: &LaplacianOperator<T>,
    bundle: &StateBundle<T>,
    offsets: &[T],
    b: &[T],
    alpha: T,
    cfg: &RobustConfig<T>,
) -> Result<(Field<T>, RobustReport<T>)> {
    let grid = op.grid().clone();
    let n = grid.len();
    let w = grid.quad_weight();
    let g = op.inverse();
    let two_w = lit::<T>(2.0) * w;
    // Q = G² / (2w), G symmetric
    let q: Vec<T> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n, k % n);
            (0..n).map(|l| g[i * n + l] * g[l * n + j]).sum::<T>() / two_w
        })
        .collect();
    let (lambda, iterations, converged) = nnqp(&q, b, n, cfg.max_iter)?;
    // u = −Gλ / (2w)
    let u_vals: Vec<T> = (0..n)
        .map(|i| -(0..n).map(|j| g[i * n + j] * lambda[j]).sum::<T>() / two_w)
        .collect();
    let u = Field::new(grid.clone(), u_vals)?;
    let state = bundle.with_control(op, &u)?;
    let ev = eval_from_offsets(state.mean_state.values(), offsets, alpha, cfg.tie_tol);

    // KKT: primal feasibility, dual feasibility, complementarity, stationarity
    let gu: Vec<T> = (0..n)
        .map(|i| (0..n).map(|j| g[i * n + j] * u.values()[j]).sum())
        .collect();
    let mut kkt = T::zero();
    for j in 0..n {
        let slack = b[j] - gu[j];
        kkt = kkt.max((-slack).max(T::zero()));
        kkt = kkt.max((-lambda[j]).max(T::zero()));
        kkt = kkt.max((lambda[j] * slack).abs());
        let stat = lit::<T>(2.0) * u.values()[j] + (0..n).map(|l| g[j * n + l] * lambda[l]).sum::<T>() / w;
        kkt = kkt.max(stat.abs());
    }
    let report = RobustReport {
        method: RobustMethod::ActiveSet,
        objective: u.norm_sq(),
        h_value: ev.h_value,
        kkt_residual: kkt,
        iterations,
        active_nodes: ev.active_nodes,
        multipliers: lambda,
        converged: converged && kkt <= cfg.kkt_tol,
    };
    Ok((u, report))
}

/// `min ½λᵀQλ + bᵀλ` over `λ ≥ 0` for symmetric positive definite `Q`
/// (primal active-set method in the Lawson–Hanson style).
fn nnqp<T: Scalar>(q: &[T], b: &[T], n: usize, max_iter: usize) -> Result<(Vec<T>, usize, bool)> {
    let scale = b.iter().fold(T::one(), |a, &x| a.max(x.abs()));
    let tol = lit::<T>(1e-13) * scale;
    let mut lambda = vec![T::zero(); n];
    let mut free = vec![false; n];
    let grad = |lambda: &[T], j: usize| -> T { (0..n).map(|l| q[j * n + l] * lambda[l]).sum::<T>() + b[j] };

    let solve_free = |free: &[bool]| -> Result<(Vec<usize>, Vec<T>)> {
        let idx: Vec<usize> = (0..n).filter(|&j| free[j]).collect();
        let k = idx.len();
        let sub: Vec<T> = (0..k * k).map(|t| q[idx[t / k] * n + idx[t % k]]).collect();
        let rhs: Vec<T> = idx.iter().map(|&j| -b[j]).collect();
        let s = DenseCholesky::factor(k, &sub)?.solve(&rhs);
        Ok((idx, s))
    };

    for it in 1..=max_iter {
        let entering = (0..n)
            .filter(|&j| !free[j])
            .map(|j| (j, grad(&lambda, j)))
            .filter(|&(_, gj)| gj < -tol)
            .fold(None, |best: Option<(usize, T)>, (j, gj)| match best {
                Some((_, bg)) if bg <= gj => best,
                _ => Some((j, gj)),
            });
        let Some((j, _)) = entering else {
            return Ok((lambda, it - 1, true));
        };
        free[j] = true;
        loop {
            let (idx, s) = solve_free(&free)?;
            if s.iter().all(|&x| x > T::zero()) {
                for (&j, &x) in idx.iter().zip(&s) {
                    lambda[j] = x;
                }
                break;
            }
            // step from λ towards s until the first free variable hits zero
            let mut step = T::one();
            for (&j, &x) in idx.iter().zip(&s) {
                if x <= T::zero() {
                    let d = lambda[j] - x;
                    if d > T::zero() {
                        step = step.min(lambda[j] / d);
                    } else {
                        step = T::zero();
                    }
                }
            }
            for (&j, &x) in idx.iter().zip(&s) {
                lambda[j] = lambda[j] + step * (x - lambda[j]);
                if lambda[j] <= T::zero() || (x <= T::zero() && lambda[j] <= tol) {
                    lambda[j] = T::zero();
                    free[j] = false;
                }
            }
            if !free.iter().any(|&f| f) {
                break;
            }
        }
    }
    Ok((lambda, max_iter, false))
}

/// Switching subgradient method: step on `∂h` while `h > tol`, otherwise on `∇F = 2u`.
/// Returns the best feasible iterate seen (or the least infeasible one).
fn subgradient<T: Scalar>(
    op: &LaplacianOperator<T>,
    bundle: &StateBundle<T>,
    offsets: &[T],
    alpha: T,
    cfg: &RobustConfig<T>,
) -> Result<(Field<T>, RobustReport<T>)> {
    let grid = op.grid().clone();
    let feas_tol = cfg.kkt_tol;
    let mut u = Field::zeros(grid.clone());
    let mut best: Option<(T, T, Field<T>)> = None; // (h, F, u)
    for k in 1..=cfg.max_iter {
        let state = bundle.with_control(op, &u)?;
        let ev = eval_from_offsets(state.mean_state.values(), offsets, alpha, cfg.tie_tol);
        let f = u.norm_sq();
        let better = match &best {
            None => true,
            Some((bh, bf, _)) => {
                let feas = ev.h_value <= feas_tol;
                let bfeas = *bh <= feas_tol;
                (feas && (!bfeas || f < *bf)) || (!feas && !bfeas && ev.h_value < *bh)
            }
        };
        if better {
            best = Some((ev.h_value, f, u.clone()));
        }
        let t = cfg.subgradient_step / count::<T>(k).sqrt();
        if ev.h_value > feas_tol {
            let g = op.green_row(ev.active_nodes[0])?;
            let gn = g.norm_sq();
            // Polyak step: project onto the linearized constraint
            let polyak = ev.h_value / gn;
            u.axpy(-polyak, &g);
        } else {
            // gradient step on F with ∇F = 2u
            u = u.scaled(T::one() - lit::<T>(2.0) * t.min(lit(0.5)));
        }
    }
    let (h, f, u) = best.expect("at least one iterate");
    let report = RobustReport {
        method: RobustMethod::Subgradient,
        objective: f,
        h_value: h,
        kkt_residual: T::nan(),
        iterations: cfg.max_iter,
        active_nodes: eval_from_offsets(
            bundle.with_control(op, &u)?.mean_state.values(),
            offsets,
            alpha,
            cfg.tie_tol,
        )
        .active_nodes,
        multipliers: vec![T::zero(); grid.len()],
        converged: h <= feas_tol,
    };
    Ok((u, report))
}

/// Middle 5% of the nodes in 1D; in 2D a centred square patch covering
/// about 5% of the nodes per axis.
pub fn default_needle_span<T: Scalar>(grid: &Grid<T>) -> Vec<usize> {
    let per = grid.per_axis();
    let width = ((per as f64) * 0.05).ceil().max(1.0) as usize;
    let start = (per - width) / 2;
    match grid.dim() {
        1 => (start..start + width).collect(),
        _ => (start..start + width)
            .flat_map(|j| (start..start + width).map(move |i| i + j * per))
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NeedleScan<T> {
    /// `(t, h(u + t·1_span))`
    pub points: Vec<(T, T)>,
    /// One-sided derivatives of `t ↦ h(u_t)` at `t = 0`.
    pub left_slope: T,
    pub right_slope: T,
    pub gap: T,
}

pub fn needle_scan<T: Scalar>(
    spec: &ProblemSpec<T>,
    op: &LaplacianOperator<T>,
    u_star: &Field<T>,
    span: &[usize],
    t_grid: &[T],
    tie_tol: T,
) -> Result<NeedleScan<T>> {
    let radius = spec
        .support_radius()
        .ok_or_else(|| Error::Configuration("needle scan needs an ellipsoidal support".into()))?;
    let grid = op.grid().clone();
    if span.is_empty() || span.iter().any(|&j| j >= grid.len()) {
        return arg("needle span must be a nonempty set of grid nodes");
    }
    let bundle = precompute_states(spec, op, u_star)?;
    let offsets = robust_offsets(bundle.basis(), &spec.cov, radius);
    let mut needle = Field::zeros(grid.clone());
    for &j in span {
        needle.values_mut()[j] = T::one();
    }
    let response = op.solve(&needle)?;
    let base = bundle.mean_state.values();
    let points = t_grid
        .iter()
        .map(|&t| {
            let h = (0..grid.len())
                .map(|j| base[j] + t * response.values()[j] + offsets[j])
                .fold(T::neg_infinity(), T::max);
            (t, h - spec.alpha)
        })
        .collect();
    let ev = eval_from_offsets(base, &offsets, spec.alpha, tie_tol);
    let slopes = ev.active_nodes.iter().map(|&j| response.values()[j]);
    let left = slopes.clone().fold(T::infinity(), T::min);
    let right = slopes.fold(T::neg_infinity(), T::max);
    Ok(NeedleScan {
        points,
        left_slope: left,
        right_slope: right,
        gap: right - left,
    })
}
