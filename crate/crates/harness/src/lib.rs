//! Experiment runner behind the `chancectl` binary.
//!
//! A run reads a TOML [`RunConfig`], executes one experiment and writes its
//! CSV files, `summary.json` and `timing.json` into the output directory in
//! one atomic step. Wall-clock time lives in `timing.json` only, so every
//! other file is reproducible byte for byte from the config and seed.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use chance_core::pde::{precompute_states, LaplacianOperator};
use chance_core::robust::robust_eval;
use chance_core::{Error, Field, ProblemSpec};
use serde_json::json;

pub use config::{Experiment, Overrides, RunConfig};
pub use error::HarnessError;
pub use output::Artifacts;

/// Largest excess of the state over `α`, taken over the grid nodes and the
/// whole ellipsoidal support, clipped at zero.
pub fn constraint_violation(
    spec: &ProblemSpec<f64>,
    op: &LaplacianOperator<f64>,
    u: &Field<f64>,
) -> Result<f64, HarnessError> {
    let radius = spec
        .support_radius()
        .ok_or_else(|| Error::Configuration("constraint violation needs an ellipsoidal support".into()))?;
    let bundle = precompute_states(spec, op, u)?;
    let ev = robust_eval(&bundle, &spec.cov, radius, spec.alpha, 0.0)?;
    Ok(ev.h_value.max(0.0))
}

/// Everything a run writes, before it is committed to disk.
pub struct RunOutput {
    pub artifacts: Artifacts,
    pub unconverged: Vec<String>,
    pub dir: PathBuf,
}

/// Executes the experiment of a resolved config without touching the disk.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    let start = Instant::now();
    let out = experiments::run_experiment(cfg)?;
    let mut artifacts = out.artifacts;
    let summary = json!({
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "converged": out.unconverged.is_empty(),
        "unconverged": out.unconverged,
        "metrics": out.metrics,
        "config": cfg,
    });
    artifacts.add_json("summary.json", &summary)?;
    if cfg.output.emit_gnuplot {
        artifacts.add_gnuplot_scripts();
    }
    let timing = json!({
        "wall_clock_seconds": start.elapsed().as_secs_f64(),
        "threads": rayon::current_num_threads(),
    });
    artifacts.add_json("timing.json", &timing)?;
    Ok(RunOutput {
        artifacts,
        unconverged: out.unconverged,
        dir: cfg.output.dir.clone(),
    })
}

/// Runs and commits. Outputs of a run whose solvers hit their caps are
/// still written, and the call then reports [`HarnessError::NonConvergence`].
pub fn run(cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    let out = execute(cfg)?;
    out.artifacts.commit(&out.dir)?;
    if !out.unconverged.is_empty() {
        return Err(HarnessError::NonConvergence(out.unconverged.join(", ")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use chance_core::distributions::{CovarianceModel, SupportScheme, SupportSpec};
    use chance_core::moreau_yosida::{path_follow, PathSchedule};
    use chance_core::{builtin_problem, BuiltinProblem};

    use super::*;

    fn truncated(n: usize) -> (ProblemSpec<f64>, LaplacianOperator<f64>) {
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1dTruncated).unwrap().with_cells(n);
        let op = LaplacianOperator::new(spec.grid().unwrap()).unwrap();
        (spec, op)
    }

    #[test]
    fn huge_threshold_has_no_violation() {
        let (mut spec, op) = truncated(29);
        spec.alpha = 1e6;
        let u = Field::constant(op.grid().clone(), 3.0);
        assert_eq!(constraint_violation(&spec, &op, &u).unwrap(), 0.0);
    }

    #[test]
    fn vanishing_basis_states_leave_mean_only() {
        let (mut spec, op) = truncated(29);
        spec.phis = vec![Arc::new(|_: &[f64]| 0.0); 2];
        spec.cov = Arc::new(CovarianceModel::identity(2).unwrap());
        spec.support = SupportSpec::ellipsoid(6.0).unwrap();
        let u = Field::constant(op.grid().clone(), -20.0);
        assert_eq!(constraint_violation(&spec, &op, &u).unwrap(), 0.0);
    }

    #[test]
    fn violation_needs_ellipsoid() {
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap().with_cells(20);
        let op = LaplacianOperator::new(spec.grid().unwrap()).unwrap();
        assert!(constraint_violation(&spec, &op, &Field::zeros(op.grid().clone())).is_err());
    }

    #[test]
    fn violation_shrinks_along_the_path() {
        let (spec, op) = truncated(29);
        let u0 = Field::constant(op.grid().clone(), -1.0);
        let mut sched = PathSchedule::reference(SupportScheme::Distribution, 0);
        sched.k_max = 2;
        let (u2, _) = path_follow(&spec, &op, &sched, &u0).unwrap();
        sched.k_max = 8;
        let (u8, _) = path_follow(&spec, &op, &sched, &u0).unwrap();
        let v2 = constraint_violation(&spec, &op, &u2).unwrap();
        let v8 = constraint_violation(&spec, &op, &u8).unwrap();
        assert!(v2 > 0.0 && v2 > v8, "v2 = {v2}, v8 = {v8}");
    }
}
