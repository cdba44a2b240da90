use chance_core::chance_opt::{solve_chance, ChanceSolveConfig};
use chance_core::distributions::{sample_sphere, SphereMode};
use chance_core::pde::{precompute_states, LaplacianOperator};
use chance_core::robust::{robust_eval, solve_robust, RobustConfig};
use chance_core::srd::{estimate, SrdMode};
use chance_core::{builtin_problem, BuiltinProblem, Field, Field32, ProblemSpec32};

// On the truncated law the SRD probability is one exactly when the robust
// constraint holds along every sampled direction; strict robust feasibility
// therefore forces it to one.
#[test]
fn robust_feasible_controls_are_certain_under_truncation() {
    let spec = builtin_problem::<f64>(BuiltinProblem::Paper1dTruncated).unwrap().with_cells(40);
    let (u_rob, _) = solve_robust(&spec, &RobustConfig::default()).unwrap();
    let op = LaplacianOperator::new(spec.grid().unwrap()).unwrap();
    let sample = sample_sphere::<f64>(spec.m(), 512, SphereMode::Qmc, 0).unwrap();
    let radius = spec.support_radius().unwrap();
    let mode = SrdMode::for_support(&spec.support);

    for t in [1e-3, 0.1, 1.0, 10.0] {
        let u = u_rob.map(|v| v - t);
        let b = precompute_states(&spec, &op, &u).unwrap();
        let h = robust_eval(&b, &spec.cov, radius, spec.alpha, 0.0).unwrap().h_value;
        assert!(h < 0.0);
        let est = estimate(&b, &spec.cov, spec.alpha, &sample, &op, mode).unwrap();
        assert_eq!(est.prob, 1.0, "t = {t}");
    }

    let b = precompute_states(&spec, &op, &Field::zeros(op.grid().clone())).unwrap();
    let h = robust_eval(&b, &spec.cov, radius, spec.alpha, 0.0).unwrap().h_value;
    let est = estimate(&b, &spec.cov, spec.alpha, &sample, &op, mode).unwrap();
    assert!(h > 1e-6 && est.prob < 1.0, "h = {h}, prob = {}", est.prob);
}

#[test]
fn single_precision_chance_solve() {
    let spec: ProblemSpec32 = builtin_problem(BuiltinProblem::Paper1d).unwrap().with_cells(30);
    let cfg = ChanceSolveConfig::<f32> {
        n_directions: 128,
        inner_tol: 1e-3,
        outer_tol: 1e-3,
        complementarity_tol: 1e-2,
        ..Default::default()
    };
    let u0: Field32 = Field::zeros(spec.grid().unwrap());
    let (u, rep) = solve_chance(&spec, &cfg, &u0).unwrap();
    assert!(u.values().iter().all(|v| v.is_finite()));
    assert!(rep.prob >= 0.9 - 1e-3, "prob {}", rep.prob);

    let spec64 = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap().with_cells(30);
    let cfg64 = ChanceSolveConfig::<f64> {
        n_directions: 128,
        ..Default::default()
    };
    let (_, rep64) = solve_chance(&spec64, &cfg64, &Field::zeros(spec64.grid().unwrap())).unwrap();
    let rel = (rep.objective as f64 - rep64.objective).abs() / rep64.objective;
    assert!(rel < 1e-2, "f32 {} vs f64 {}", rep.objective, rep64.objective);
}
