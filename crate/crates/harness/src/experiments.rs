use std::sync::Arc;

use chance_core::chance_opt::{p_sweep, solve_chance_with, ChanceReport};
use chance_core::distributions::{sample_sphere, sample_support, SupportScheme};
use chance_core::moreau_yosida::{path_follow, PathTrace};
use chance_core::pde::{precompute_states, LaplacianOperator};
use chance_core::robust::{default_needle_span, needle_scan, robust_eval, solve_robust_with};
use chance_core::srd::{mc_probability_oracle, SrdMode};
use chance_core::{Field, Grid, ProblemSpec};
use serde_json::{json, Value};

use crate::config::{Experiment, RunConfig};
use crate::constraint_violation;
use crate::error::HarnessError;
use crate::output::{num, Artifacts};

/// What an experiment produced before the summary is attached.
pub struct Outcome {
    pub artifacts: Artifacts,
    pub metrics: Value,
    /// Names of the solves that stopped at an iteration cap.
    pub unconverged: Vec<String>,
}

/// Seeds of the independent random streams of a run.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Seeds {
    pub sphere: u64,
    pub monte_carlo: u64,
    pub scenarios: u64,
    pub saa: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Self {
            sphere: seed,
            monte_carlo: seed.wrapping_add(1),
            scenarios: seed.wrapping_add(2),
            saa: seed,
        }
    }
}

struct Setup {
    spec: ProblemSpec<f64>,
    op: LaplacianOperator<f64>,
    grid: Arc<Grid<f64>>,
}

impl Setup {
    fn new(cfg: &RunConfig) -> Result<Self, HarnessError> {
        let spec = cfg.spec()?;
        let grid = spec.grid()?;
        let op = LaplacianOperator::new(grid.clone())?;
        Ok(Self { spec, op, grid })
    }
}

pub fn run_experiment(cfg: &RunConfig) -> Result<Outcome, HarnessError> {
    let s = Setup::new(cfg)?;
    match cfg.experiment {
        Experiment::Prob1d | Experiment::Prob2d => probabilistic(cfg, &s),
        Experiment::PSweep => sweep(cfg, &s),
        Experiment::MyPath => my_path(cfg, &s),
        Experiment::Robust => robust(cfg, &s),
        Experiment::CompareAll => compare_all(cfg, &s),
    }
}

fn history_rows(rep: &ChanceReport<f64>) -> Vec<Vec<String>> {
    rep.outer
        .iter()
        .map(|o| {
            vec![
                o.outer.to_string(),
                o.inner_iterations.to_string(),
                num(o.objective),
                num(o.prob),
                num(o.lambda),
                num(o.mu),
                num(o.violation),
            ]
        })
        .collect()
}

const HISTORY_HEADER: [&str; 7] = ["outer", "inner_iterations", "objective", "prob", "lambda", "mu", "violation"];

fn probabilistic(cfg: &RunConfig, s: &Setup) -> Result<Outcome, HarnessError> {
    let seeds = Seeds::from_base(cfg.seed);
    let ccfg = cfg.chance_config(s.spec.p_level);
    let sample = sample_sphere(s.spec.m(), ccfg.n_directions, ccfg.sphere_mode, seeds.sphere)?;
    let u0 = Field::zeros(s.grid.clone());
    let (u, rep) = solve_chance_with(&s.spec, &s.op, &sample, &ccfg, &u0)?;

    let val = &cfg.solver.validation;
    let mode = SrdMode::for_support(&s.spec.support);
    let (mc_prob, mc_se) = mc_probability_oracle(&s.spec, &s.op, &u, val.mc_draws, seeds.monte_carlo, mode)?;

    let bundle = precompute_states(&s.spec, &s.op, &u)?;
    let zs = sample_support(&s.spec.cov, &s.spec.support, val.scenarios, SupportScheme::Distribution, seeds.scenarios)?;
    let states = zs.iter().map(|z| bundle.superpose(z)).collect::<Result<Vec<_>, _>>()?;
    let crossing = states.iter().filter(|y| y.max() > s.spec.alpha).count();

    let mut a = Artifacts::new();
    a.add_field("control.csv", &u);
    a.add_field("mean_state.csv", &bundle.mean_state);
    let names: Vec<String> = (0..states.len()).map(|i| format!("s{i:02}")).collect();
    let cols: Vec<(&str, &Field<f64>)> = names.iter().map(String::as_str).zip(&states).collect();
    if !cols.is_empty() {
        a.add_columns("scenarios.csv", &cols);
    }
    a.add_table("history.csv", &HISTORY_HEADER, &history_rows(&rep), false);

    let metrics = json!({
        "objective": rep.objective,
        "prob_srd": rep.prob,
        "prob_mc": mc_prob,
        "prob_mc_std_error": mc_se,
        "multiplier": rep.multiplier,
        "tie_fraction": rep.tie_fraction,
        "status": rep.status,
        "outer_iterations": rep.outer.len(),
        "initial_shift": rep.initial_shift,
        "sphere_sample": rep.sphere_sample,
        "scenario_count": states.len(),
        "scenarios_crossing_alpha": crossing,
        "active_lower": rep.active_lower,
        "active_upper": rep.active_upper,
        "seeds": seeds,
    });
    let unconverged = if rep.converged() { vec![] } else { vec!["chance".into()] };
    Ok(Outcome {
        artifacts: a,
        metrics,
        unconverged,
    })
}

fn sweep(cfg: &RunConfig, s: &Setup) -> Result<Outcome, HarnessError> {
    let seeds = Seeds::from_base(cfg.seed);
    let levels = &cfg.solver.chance.levels;
    let ccfg = cfg.chance_config(levels[0]);
    let points = p_sweep(&s.spec, &ccfg, levels)?;
    let (u_rob, rob) = solve_robust_with(&s.spec, &s.op, &cfg.robust_config())?;

    let mut rows = Vec::new();
    let mut per_p = Vec::new();
    let mut unconverged = Vec::new();
    for pt in &points {
        let dist = pt.control.distance(&u_rob)?;
        let viol = constraint_violation(&s.spec, &s.op, &pt.control)?;
        rows.push(vec![
            num(pt.p),
            num(pt.objective),
            num(pt.report.prob),
            num(dist),
            num(viol),
        ]);
        per_p.push(json!({
            "p": pt.p,
            "objective": pt.objective,
            "prob_srd": pt.report.prob,
            "distance_to_robust": dist,
            "violation": viol,
            "status": pt.report.status,
            "outer_iterations": pt.report.outer.len(),
        }));
        if !pt.report.converged() {
            unconverged.push(format!("chance p={}", pt.p));
        }
    }
    if !rob.converged {
        unconverged.push("robust".into());
    }

    let mut a = Artifacts::new();
    a.add_table(
        "sweep.csv",
        &["p", "objective", "prob", "distance_to_robust", "violation"],
        &rows,
        false,
    );
    let names: Vec<String> = points.iter().map(|p| format!("p_{}", p.p)).collect();
    let mut cols: Vec<(&str, &Field<f64>)> = names.iter().map(String::as_str).zip(points.iter().map(|p| &p.control)).collect();
    cols.push(("robust", &u_rob));
    a.add_columns("controls.csv", &cols);
    for pt in &points {
        a.add_field(&format!("control_p{}.csv", pt.p), &pt.control);
    }
    a.add_field("control_robust.csv", &u_rob);

    let metrics = json!({
        "levels": per_p,
        "robust_objective": rob.objective,
        "robust_h": rob.h_value,
        "seeds": seeds,
    });
    Ok(Outcome {
        artifacts: a,
        metrics,
        unconverged,
    })
}

fn trace_rows(t: &PathTrace<f64>) -> Vec<Vec<String>> {
    t.levels
        .iter()
        .map(|l| {
            vec![
                l.k.to_string(),
                num(l.gamma),
                l.n_scenarios.to_string(),
                l.inner.iterations.to_string(),
                num(l.inner.value),
                num(l.inner.grad_norm),
                u8::from(l.inner.converged).to_string(),
                l.violation.map(num).unwrap_or_default(),
            ]
        })
        .collect()
}

const TRACE_HEADER: [&str; 8] = [
    "k",
    "gamma",
    "n_scenarios",
    "iterations",
    "value",
    "grad_norm",
    "converged",
    "violation",
];

fn run_paths(
    cfg: &RunConfig,
    s: &Setup,
    schemes: &[SupportScheme],
) -> Result<Vec<(SupportScheme, Field<f64>, PathTrace<f64>)>, HarnessError> {
    let u0 = Field::constant(s.grid.clone(), cfg.solver.moreau_yosida.u0);
    schemes
        .iter()
        .map(|&scheme| {
            let (u, t) = path_follow(&s.spec, &s.op, &cfg.schedule(scheme), &u0)?;
            Ok((scheme, u, t))
        })
        .collect()
}

fn my_path(cfg: &RunConfig, s: &Setup) -> Result<Outcome, HarnessError> {
    let runs = run_paths(cfg, s, &cfg.solver.moreau_yosida.schemes)?;
    let mut a = Artifacts::new();
    let mut per = serde_json::Map::new();
    let mut unconverged = Vec::new();
    for (scheme, u, t) in &runs {
        let name = scheme.as_str();
        a.add_field(&format!("control_{name}.csv"), u);
        a.add_table(&format!("path_{name}.csv"), &TRACE_HEADER, &trace_rows(t), false);
        let viol = constraint_violation(&s.spec, &s.op, u)?;
        per.insert(
            name.to_string(),
            json!({
                "objective": u.norm_sq(),
                "violation": viol,
                "converged": t.converged,
                "trace": t,
            }),
        );
        if !t.converged {
            unconverged.push(format!("moreau_yosida {name}"));
        }
    }

    let k_max = cfg.solver.moreau_yosida.k_max;
    let mut header = vec!["k"];
    header.extend(runs.iter().map(|(sc, _, _)| sc.as_str()));
    let rows: Vec<Vec<String>> = (0..=k_max)
        .map(|k| {
            let mut r = vec![k.to_string()];
            r.extend(runs.iter().map(|(_, _, t)| t.levels[k].violation.map(num).unwrap_or_default()));
            r
        })
        .collect();
    a.add_table("violation.csv", &header, &rows, false);

    let metrics = json!({
        "schemes": per,
        "seeds": Seeds::from_base(cfg.seed),
    });
    Ok(Outcome {
        artifacts: a,
        metrics,
        unconverged,
    })
}

fn robust(cfg: &RunConfig, s: &Setup) -> Result<Outcome, HarnessError> {
    let rcfg = cfg.robust_config();
    let (u, rep) = solve_robust_with(&s.spec, &s.op, &rcfg)?;
    let radius = s
        .spec
        .support_radius()
        .ok_or_else(|| HarnessError::Config("robust needs problem.support_radius".into()))?;
    let bundle = precompute_states(&s.spec, &s.op, &u)?;
    let ev = robust_eval(&bundle, &s.spec.cov, radius, s.spec.alpha, rcfg.tie_tol)?;
    let worst_node = ev.active_nodes[0];
    let worst = bundle.superpose(&ev.worst_z_per_node[worst_node])?;

    let span = cfg
        .solver
        .robust
        .needle_span
        .clone()
        .unwrap_or_else(|| default_needle_span(&s.grid));
    let scan = needle_scan(&s.spec, &s.op, &u, &span, &cfg.solver.robust.needle_t, rcfg.tie_tol)?;

    let mut a = Artifacts::new();
    a.add_field("control.csv", &u);
    a.add_columns("worst_state.csv", &[("mean", &bundle.mean_state), ("worst", &worst)]);
    let rows: Vec<Vec<String>> = scan.points.iter().map(|&(t, h)| vec![num(t), num(h)]).collect();
    a.add_table("needle.csv", &["t", "h"], &rows, false);

    let metrics = json!({
        "objective": rep.objective,
        "h_value": rep.h_value,
        "kkt_residual": rep.kkt_residual,
        "iterations": rep.iterations,
        "method": rep.method,
        "active_nodes": rep.active_nodes,
        "multipliers": rep.multipliers,
        "worst_node": worst_node,
        "worst_z": ev.worst_z_per_node[worst_node],
        "needle_span": span,
        "needle_left_slope": scan.left_slope,
        "needle_right_slope": scan.right_slope,
        "needle_gap": scan.gap,
        "violation": constraint_violation(&s.spec, &s.op, &u)?,
    });
    let unconverged = if rep.converged { vec![] } else { vec!["robust".into()] };
    Ok(Outcome {
        artifacts: a,
        metrics,
        unconverged,
    })
}

fn compare_all(cfg: &RunConfig, s: &Setup) -> Result<Outcome, HarnessError> {
    let seeds = Seeds::from_base(cfg.seed);
    let mut methods: Vec<(String, Field<f64>, bool)> = Vec::new();

    let level = cfg.solver.chance.compare_level;
    let ccfg = cfg.chance_config(level);
    let sample = sample_sphere(s.spec.m(), ccfg.n_directions, ccfg.sphere_mode, seeds.sphere)?;
    let u0 = Field::zeros(s.grid.clone());
    let (u_p, rep) = solve_chance_with(&s.spec, &s.op, &sample, &ccfg, &u0)?;
    methods.push(("probabilistic".into(), u_p, rep.converged()));

    let schemes = [SupportScheme::Distribution, SupportScheme::Interior, SupportScheme::Boundary];
    for (scheme, u, t) in run_paths(cfg, s, &schemes)? {
        methods.push((format!("my_{}", scheme.as_str()), u, t.converged));
    }

    let (u_r, rob) = solve_robust_with(&s.spec, &s.op, &cfg.robust_config())?;
    methods.push(("robust".into(), u_r, rob.converged));

    let mut a = Artifacts::new();
    let mut rows = Vec::new();
    let mut table = Vec::new();
    let mut unconverged = Vec::new();
    for (name, u, ok) in &methods {
        a.add_field(&format!("control_{name}.csv"), u);
        let obj = u.norm_sq();
        let viol = constraint_violation(&s.spec, &s.op, u)?;
        rows.push(vec![name.clone(), num(obj), num(viol)]);
        table.push(json!({"method": name, "objective": obj, "violation": viol, "converged": ok}));
        if !ok {
            unconverged.push(name.clone());
        }
    }
    a.add_bytes("comparison.csv", {
        let mut t = String::from("method,objective,violation\n");
        for r in &rows {
            t.push_str(&r.join(","));
            t.push('\n');
        }
        t.into_bytes()
    });

    let metrics = json!({
        "comparison": table,
        "probabilistic_level": level,
        "probabilistic_prob_srd": rep.prob,
        "seeds": seeds,
    });
    Ok(Outcome {
        artifacts: a,
        metrics,
        unconverged,
    })
}
