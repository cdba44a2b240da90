//! Experiment configuration files.
//!
//! ```toml
//! experiment = "prob_1d"
//! seed = 0
//!
//! [problem]
//! builtin = "paper_1d"
//! n_cells = 120
//!
//! [solver.chance]
//! n_directions = 512
//!
//! [output]
//! dir = "out/prob_1d"
//! ```
//!
//! Every field except `experiment` is optional. Fields left out are filled
//! with per-experiment defaults by [`RunConfig::resolve`], and the resolved
//! config is echoed into the run summary.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chance_core::distributions::{RadialLaw, SphereMode, SupportScheme, SupportSpec};
use chance_core::moreau_yosida::StepRule;
use chance_core::{builtin_problem, BuiltinProblem, ProblemSpec};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    #[serde(rename = "prob_1d")]
    Prob1d,
    #[serde(rename = "prob_2d")]
    Prob2d,
    PSweep,
    MyPath,
    Robust,
    CompareAll,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Prob1d,
        Experiment::Prob2d,
        Experiment::PSweep,
        Experiment::MyPath,
        Experiment::Robust,
        Experiment::CompareAll,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Prob1d => "prob_1d",
            Experiment::Prob2d => "prob_2d",
            Experiment::PSweep => "p_sweep",
            Experiment::MyPath => "my_path",
            Experiment::Robust => "robust",
            Experiment::CompareAll => "compare_all",
        }
    }

    fn default_problem(&self) -> BuiltinProblem {
        match self {
            Experiment::Prob1d => BuiltinProblem::Paper1d,
            Experiment::Prob2d => BuiltinProblem::Paper2d,
            _ => BuiltinProblem::Paper1dTruncated,
        }
    }

    fn default_cells(&self) -> Option<usize> {
        match self {
            Experiment::MyPath | Experiment::CompareAll => Some(29),
            _ => None,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Experiment::ALL.iter().map(|e| e.as_str()).collect();
                HarnessError::Config(format!("unknown experiment `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub builtin: Option<BuiltinProblem>,
    pub n_cells: Option<usize>,
    pub alpha: Option<f64>,
    pub p_level: Option<f64>,
    /// Truncate the noise to `zᵀΣ⁻¹z ≤ r²`.
    pub support_radius: Option<f64>,
    /// Control bounds `[lo, hi]`.
    pub bounds: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChanceSection {
    pub n_directions: Option<usize>,
    pub sphere_mode: SphereMode,
    pub max_outer: usize,
    pub max_inner: usize,
    pub lambda0: f64,
    pub mu0: f64,
    pub growth: f64,
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub complementarity_tol: f64,
    /// Levels of the `p_sweep` experiment.
    pub levels: Vec<f64>,
    /// Level of the probabilistic method in `compare_all`.
    pub compare_level: f64,
}

impl Default for ChanceSection {
    fn default() -> Self {
        let d = chance_core::chance_opt::ChanceSolveConfig::<f64>::default();
        Self {
            n_directions: None,
            sphere_mode: d.sphere_mode,
            max_outer: d.max_outer,
            max_inner: d.max_inner,
            lambda0: d.lambda0,
            mu0: d.mu0,
            growth: d.growth,
            inner_tol: d.inner_tol,
            outer_tol: d.outer_tol,
            complementarity_tol: d.complementarity_tol,
            levels: vec![0.9, 0.95, 0.99, 0.999],
            compare_level: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MySection {
    pub schemes: Vec<SupportScheme>,
    pub k_max: usize,
    pub gamma_base: f64,
    pub size_base: usize,
    pub step: StepRule<f64>,
    pub tol: f64,
    pub max_inner: usize,
    pub radial_law: RadialLaw,
    /// Constant initial control.
    pub u0: f64,
}

impl Default for MySection {
    fn default() -> Self {
        let p = chance_core::moreau_yosida::PathSchedule::<f64>::reference(SupportScheme::Distribution, 0);
        Self {
            schemes: vec![SupportScheme::Distribution, SupportScheme::Interior, SupportScheme::Boundary],
            k_max: p.k_max,
            gamma_base: p.gamma_base,
            size_base: p.size_base,
            step: p.step,
            tol: p.tol,
            max_inner: p.max_inner,
            radial_law: p.radial_law,
            u0: -1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustSection {
    pub max_iter: usize,
    pub kkt_tol: f64,
    pub tie_tol: f64,
    /// Needle amplitudes.
    pub needle_t: Vec<f64>,
    /// Explicit needle span as a node list; the default is the centre 5%.
    pub needle_span: Option<Vec<usize>>,
}

impl Default for RobustSection {
    fn default() -> Self {
        let d = chance_core::robust::RobustConfig::<f64>::default();
        Self {
            max_iter: d.max_iter,
            kkt_tol: d.kkt_tol,
            tie_tol: d.tie_tol,
            needle_t: (-10..=10).map(|k| k as f64 * 0.5).collect(),
            needle_span: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSection {
    /// Monte Carlo draws of the probability check.
    pub mc_draws: usize,
    /// Sampled scenario states written next to the control.
    pub scenarios: usize,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self {
            mc_draws: 100_000,
            scenarios: 20,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub chance: ChanceSection,
    pub moreau_yosida: MySection,
    pub robust: RobustSection,
    pub validation: ValidationSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub emit_gnuplot: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            emit_gnuplot: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub emit_gnuplot: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies overrides and fills experiment-dependent defaults.
    pub fn resolve(mut self, ov: &Overrides) -> Result<Self, HarnessError> {
        if let Some(e) = ov.experiment {
            self.experiment = e;
        }
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(d) = &ov.out {
            self.output.dir = d.clone();
        }
        self.output.emit_gnuplot |= ov.emit_gnuplot;

        let which = *self.problem.builtin.get_or_insert(self.experiment.default_problem());
        let base = builtin_problem::<f64>(which)?;
        self.problem.n_cells.get_or_insert(self.experiment.default_cells().unwrap_or(base.n_cells));
        self.problem.alpha.get_or_insert(base.alpha);
        self.problem.p_level.get_or_insert(base.p_level);
        if self.problem.support_radius.is_none() {
            self.problem.support_radius = base.support_radius();
        }
        if self.problem.bounds.is_none() {
            self.problem.bounds = base.control_bounds.map(|(lo, hi)| [lo, hi]);
        }
        let k_default = if base.dim == 2 { 8192 } else { 512 };
        self.solver.chance.n_directions.get_or_insert(k_default);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let c = &self.solver.chance;
        if c.levels.is_empty() || c.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("solver.chance.levels must be a nonempty increasing list".into());
        }
        if c.levels.iter().chain([&c.compare_level]).any(|&p| !(p > 0.0 && p <= 1.0)) {
            return bad("probability levels must lie in (0, 1]".into());
        }
        let my = &self.solver.moreau_yosida;
        if my.schemes.is_empty() {
            return bad("solver.moreau_yosida.schemes must not be empty".into());
        }
        if self.solver.validation.mc_draws == 0 {
            return bad("solver.validation.mc_draws must be positive".into());
        }
        if self.solver.robust.needle_t.is_empty() {
            return bad("solver.robust.needle_t must not be empty".into());
        }
        if let Some([lo, hi]) = self.problem.bounds {
            if !(lo < hi) {
                return bad(format!("bounds [{lo}, {hi}] are empty"));
            }
        }
        self.spec()?;
        self.chance_config(self.problem.p_level.unwrap_or(0.9)).validate()?;
        self.schedule(SupportScheme::Distribution).validate()?;
        Ok(())
    }

    /// Problem description with the overrides applied.
    pub fn spec(&self) -> Result<ProblemSpec<f64>, HarnessError> {
        let which = self
            .problem
            .builtin
            .ok_or_else(|| HarnessError::Config("config is not resolved".into()))?;
        let mut spec = builtin_problem::<f64>(which)?;
        if let Some(n) = self.problem.n_cells {
            spec.n_cells = n;
        }
        if let Some(a) = self.problem.alpha {
            spec.alpha = a;
        }
        if let Some(p) = self.problem.p_level {
            spec.p_level = p;
        }
        spec.support = match self.problem.support_radius {
            Some(r) => SupportSpec::ellipsoid(r)?,
            None => SupportSpec::full_space(),
        };
        spec.control_bounds = self.problem.bounds.map(|[lo, hi]| (lo, hi));
        spec.validate()?;
        Ok(spec)
    }

    pub fn chance_config(&self, p_level: f64) -> chance_core::chance_opt::ChanceSolveConfig<f64> {
        let c = &self.solver.chance;
        chance_core::chance_opt::ChanceSolveConfig {
            p_level,
            n_directions: c.n_directions.unwrap_or(512),
            sphere_mode: c.sphere_mode,
            seed: self.seed,
            max_outer: c.max_outer,
            max_inner: c.max_inner,
            lambda0: c.lambda0,
            mu0: c.mu0,
            growth: c.growth,
            inner_tol: c.inner_tol,
            outer_tol: c.outer_tol,
            complementarity_tol: c.complementarity_tol,
        }
    }

    pub fn schedule(&self, scheme: SupportScheme) -> chance_core::moreau_yosida::PathSchedule<f64> {
        let m = &self.solver.moreau_yosida;
        chance_core::moreau_yosida::PathSchedule {
            k_max: m.k_max,
            gamma_base: m.gamma_base,
            size_base: m.size_base,
            step: m.step,
            tol: m.tol,
            max_inner: m.max_inner,
            scheme,
            radial_law: m.radial_law,
            seed: self.seed,
        }
    }

    pub fn robust_config(&self) -> chance_core::robust::RobustConfig<f64> {
        let r = &self.solver.robust;
        chance_core::robust::RobustConfig {
            max_iter: r.max_iter,
            kkt_tol: r.kkt_tol,
            tie_tol: r.tie_tol,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_resolves_per_experiment() {
        let c = RunConfig::parse("experiment = \"prob_2d\"").unwrap();
        let c = c.resolve(&Overrides::default()).unwrap();
        assert_eq!(c.problem.builtin, Some(BuiltinProblem::Paper2d));
        assert_eq!(c.problem.n_cells, Some(20));
        assert_eq!(c.solver.chance.n_directions, Some(8192));
        assert_eq!(c.problem.bounds, Some([-5.0, 0.0]));

        let c = RunConfig::parse("experiment = \"my_path\"").unwrap();
        let c = c.resolve(&Overrides::default()).unwrap();
        assert_eq!(c.problem.n_cells, Some(29));
        assert_eq!(c.problem.support_radius, Some(6.0));
        assert_eq!(c.solver.moreau_yosida.step, StepRule::Diminishing { c: 4.0 });

        let c = RunConfig::parse("experiment = \"p_sweep\"\n[problem]\nbuiltin = \"paper_1d\"").unwrap();
        assert_eq!(c.problem.builtin, Some(BuiltinProblem::Paper1d));
    }

    #[test]
    fn overrides_win() {
        let c = RunConfig::parse("experiment = \"robust\"\nseed = 3\n[output]\ndir = \"a\"").unwrap();
        let ov = Overrides {
            experiment: Some(Experiment::Prob1d),
            seed: Some(9),
            out: Some("b".into()),
            emit_gnuplot: true,
        };
        let c = c.resolve(&ov).unwrap();
        assert_eq!(c.experiment, Experiment::Prob1d);
        assert_eq!(c.seed, 9);
        assert_eq!(c.output.dir, PathBuf::from("b"));
        assert!(c.output.emit_gnuplot);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("experiment = \"nope\"").is_err());
        assert!(RunConfig::parse("experiment = \"robust\"\nbogus = 1").is_err());
        assert!(RunConfig::parse("[problem]\nn_cells = 5").is_err());
        let c = RunConfig::parse("experiment = \"p_sweep\"\n[solver.chance]\nlevels = [0.99, 0.9]").unwrap();
        assert!(c.resolve(&Overrides::default()).is_err());
        let c = RunConfig::parse("experiment = \"robust\"\n[problem]\nn_cells = 1").unwrap();
        assert!(c.resolve(&Overrides::default()).is_err());
        assert!("compare".parse::<Experiment>().is_err());
        assert_eq!("compare_all".parse::<Experiment>().unwrap(), Experiment::CompareAll);
    }

    #[test]
    fn step_rule_and_schemes_parse() {
        let text = r#"
            experiment = "my_path"
            [solver.moreau_yosida]
            schemes = ["boundary"]
            step = { rule = "armijo", c = 2.0 }
            radial_law = "volume"
        "#;
        let c = RunConfig::parse(text).unwrap().resolve(&Overrides::default()).unwrap();
        assert_eq!(c.solver.moreau_yosida.schemes, vec![SupportScheme::Boundary]);
        assert_eq!(c.schedule(SupportScheme::Boundary).step, StepRule::Armijo { c: 2.0 });
        assert_eq!(c.solver.moreau_yosida.radial_law, RadialLaw::Volume);
    }
}
