//! Problem data: the grid, grid functions, and the random source model.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::{CovarianceModel, SupportSpec};
use crate::error::{arg, Error, Result};
use crate::scalar::{count, lit, Scalar};

/// Source term evaluated at a point of the domain (`dim` coordinates).
pub type SourceFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// Uniform finite difference grid on `(0,1)^dim`; only interior nodes are stored.
///
/// In 2D node `(i, j)` (zero-based along x1 and x2) has flat index `i + j * (n_cells - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dim: usize,
    n_cells: usize,
    h: T,
    quad_weight: T,
    coords: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(dim: usize, n_cells: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return arg(format!("grid dimension must be 1 or 2, got {dim}"));
        }
        if n_cells < 2 {
            return arg(format!("need at least 2 cells per axis, got {n_cells}"));
        }
        let h = T::one() / count::<T>(n_cells);
        let per_axis = n_cells - 1;
        let mut coords = Vec::with_capacity(per_axis.pow(dim as u32) * dim);
        match dim {
            1 => coords.extend((1..n_cells).map(|i| count::<T>(i) * h)),
            _ => {
                for j in 1..n_cells {
                    for i in 1..n_cells {
                        coords.push(count::<T>(i) * h);
                        coords.push(count::<T>(j) * h);
                    }
                }
            }
        }
        Ok(Self {
            dim,
            n_cells,
            h,
            quad_weight: h.powi(dim as i32),
            coords,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Interior nodes along one axis.
    pub fn per_axis(&self) -> usize {
        self.n_cells - 1
    }

    /// Number of interior nodes.
    pub fn len(&self) -> usize {
        self.per_axis().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mesh_width(&self) -> T {
        self.h
    }

    /// Quadrature weight `h^dim` attached to each interior node.
    pub fn quad_weight(&self) -> T {
        self.quad_weight
    }

    pub fn point(&self, node: usize) -> &[T] {
        &self.coords[node * self.dim..(node + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[T]> {
        self.coords.chunks(self.dim)
    }

    pub(crate) fn same_shape(&self, other: &Grid<T>) -> bool {
        self.dim == other.dim && self.n_cells == other.n_cells
    }
}

/// Grid function on interior nodes.
#[derive(Debug, Clone)]
pub struct Field<T> {
    grid: Arc<Grid<T>>,
    values: Vec<T>,
}

impl<T: Scalar> Field<T> {
    pub fn new(grid: Arc<Grid<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return arg(format!(
                "field has {} values but the grid has {} interior nodes",
                values.len(),
                grid.len()
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid<T>>) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: Arc<Grid<T>>, c: T) -> Self {
        let values = vec![c; grid.len()];
        Self { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid<T>>, f: impl Fn(&[T]) -> T) -> Self {
        let values = grid.points().map(f).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_same_grid(&self, other: &Field<T>) -> Result<()> {
        if self.grid.same_shape(&other.grid) {
            Ok(())
        } else {
            arg("fields live on different grids")
        }
    }

    /// Discrete L² inner product `Σ a_j b_j w`.
    pub fn dot(&self, other: &Field<T>) -> Result<T> {
        self.check_same_grid(other)?;
        Ok(self.dot_unchecked(other))
    }

    pub(crate) fn dot_unchecked(&self, other: &Field<T>) -> T {
        let s: T = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .sum();
        s * self.grid.quad_weight()
    }

    pub fn norm_sq(&self) -> T {
        self.dot_unchecked(self)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn max(&self) -> T {
        self.values
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| a.max(b))
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), |a, b| a.min(b))
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: T, other: &Field<T>) {
        for (s, &o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn scaled(&self, a: T) -> Field<T> {
        self.map(|v| a * v)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Field<T> {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + a * other`
    pub fn plus_scaled(&self, a: T, other: &Field<T>) -> Field<T> {
        let mut out = self.clone();
        out.axpy(a, other);
        out
    }

    pub fn distance(&self, other: &Field<T>) -> Result<T> {
        self.check_same_grid(other)?;
        Ok(self.plus_scaled(-T::one(), other).norm())
    }
}

/// Full description of one control problem instance.
#[derive(Clone)]
pub struct ProblemSpec<T> {
    pub name: String,
    pub dim: usize,
    pub n_cells: usize,
    pub alpha: T,
    pub p_level: T,
    pub f0: SourceFn<T>,
    pub phis: Vec<SourceFn<T>>,
    pub cov: Arc<CovarianceModel<T>>,
    pub support: SupportSpec<T>,
    pub control_bounds: Option<(T, T)>,
}

impl<T: Scalar> fmt::Debug for ProblemSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("n_cells", &self.n_cells)
            .field("m", &self.m())
            .field("alpha", &self.alpha)
            .field("p_level", &self.p_level)
            .field("support", &self.support)
            .field("control_bounds", &self.control_bounds)
            .finish()
    }
}

impl<T: Scalar> ProblemSpec<T> {
    /// Noise dimension.
    pub fn m(&self) -> usize {
        self.phis.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phis.is_empty() {
            return arg("at least one basis source is required");
        }
        if self.cov.dim() != self.m() {
            return arg(format!(
                "covariance is {}x{} but there are {} basis sources",
                self.cov.dim(),
                self.cov.dim(),
                self.m()
            ));
        }
        if !self.alpha.is_finite() {
            return arg("threshold alpha must be finite");
        }
        if !(self.p_level > T::zero() && self.p_level <= T::one()) {
            return arg(format!("probability level {} outside (0,1]", self.p_level));
        }
        if let Some((lo, hi)) = self.control_bounds {
            if !(lo < hi) {
                return arg(format!("control bounds ({lo}, {hi}) are not ordered"));
            }
        }
        self.support.validate()?;
        Grid::<T>::new(self.dim, self.n_cells).map(|_| ())
    }

    pub fn grid(&self) -> Result<Arc<Grid<T>>> {
        Grid::new(self.dim, self.n_cells).map(Arc::new)
    }

    /// Same problem on a different resolution.
    pub fn with_cells(mut self, n_cells: usize) -> Self {
        self.n_cells = n_cells;
        self
    }

    /// Samples `f(x, z) = f0(x) + Σ z_i φ_i(x)` at the interior nodes.
    pub fn evaluate_source(&self, z: &[T], grid: &Arc<Grid<T>>) -> Result<Field<T>> {
        if z.len() != self.m() {
            return arg(format!(
                "noise vector has length {}, expected {}",
                z.len(),
                self.m()
            ));
        }
        Ok(Field::from_fn(grid.clone(), |x| {
            let mut v = (self.f0)(x);
            for (zi, phi) in z.iter().zip(&self.phis) {
                v += *zi * phi(x);
            }
            v
        }))
    }

    pub fn mean_source(&self, grid: &Arc<Grid<T>>) -> Field<T> {
        Field::from_fn(grid.clone(), |x| (self.f0)(x))
    }

    pub fn basis_source(&self, i: usize, grid: &Arc<Grid<T>>) -> Field<T> {
        let phi = &self.phis[i];
        Field::from_fn(grid.clone(), |x| phi(x))
    }

    /// Truncation radius when the support is an ellipsoid.
    pub fn support_radius(&self) -> Option<T> {
        self.support.radius()
    }
}

/// Named configurations of the reference experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinProblem {
    #[serde(rename = "paper_1d")]
    Paper1d,
    #[serde(rename = "paper_1d_truncated")]
    Paper1dTruncated,
    #[serde(rename = "paper_2d")]
    Paper2d,
}

impl BuiltinProblem {
    pub fn as_str(&self) -> &'static str {
        match self {
            BuiltinProblem::Paper1d => "paper_1d",
            BuiltinProblem::Paper1dTruncated => "paper_1d_truncated",
            BuiltinProblem::Paper2d => "paper_2d",
        }
    }
}

impl FromStr for BuiltinProblem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_1d" => Ok(BuiltinProblem::Paper1d),
            "paper_1d_truncated" => Ok(BuiltinProblem::Paper1dTruncated),
            "paper_2d" => Ok(BuiltinProblem::Paper2d),
            other => arg(format!("unknown builtin problem `{other}`")),
        }
    }
}

fn source<T: Scalar>(f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> SourceFn<T> {
    Arc::new(f)
}

/// Basis sources of the 1D experiment: odd indices `sin(i x)`, even indices `cos(x / i)`.
fn paper_1d_basis<T: Scalar>() -> Vec<SourceFn<T>> {
    let mut phis: Vec<SourceFn<T>> = Vec::with_capacity(6);
    for i in 1..=3usize {
        let k = count::<T>(i);
        phis.push(source(move |x: &[T]| (k * x[0]).sin()));
        let d = count::<T>(i + 1);
        phis.push(source(move |x: &[T]| (x[0] / d).cos()));
    }
    phis
}

pub fn builtin_problem<T: Scalar>(which: BuiltinProblem) -> Result<ProblemSpec<T>> {
    let alpha = lit::<T>(0.2);
    let p_level = lit::<T>(0.9);
    let spec = match which {
        BuiltinProblem::Paper1d | BuiltinProblem::Paper1dTruncated => {
            let support = match which {
                BuiltinProblem::Paper1dTruncated => SupportSpec::ellipsoid(lit(6.0))?,
                _ => SupportSpec::full_space(),
            };
            ProblemSpec {
                name: which.as_str().to_string(),
                dim: 1,
                n_cells: 120,
                alpha,
                p_level,
                f0: source(|x: &[T]| lit::<T>(5.0) * x[0] * x[0]),
                phis: paper_1d_basis(),
                cov: Arc::new(CovarianceModel::geometric(6, lit(9.0), lit(0.6))?),
                support,
                control_bounds: None,
            }
        }
        BuiltinProblem::Paper2d => {
            let m = 30;
            let phis = (1..=m)
                .map(|i| {
                    let k = count::<T>(i);
                    source(move |x: &[T]| (k * x[0]).sin() * (k * x[1]).cos())
                })
                .collect();
            ProblemSpec {
                name: which.as_str().to_string(),
                dim: 2,
                n_cells: 20,
                alpha,
                p_level,
                f0: source(|x: &[T]| lit::<T>(5.0) * x[0] * x[1]),
                phis,
                cov: Arc::new(CovarianceModel::geometric(m, lit(9.0), lit(0.6))?),
                support: SupportSpec::full_space(),
                control_bounds: Some((lit(-5.0), T::zero())),
            }
        }
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_are_interior() {
        let g = Grid::<f64>::new(2, 5).unwrap();
        assert_eq!(g.len(), 16);
        assert!(g.points().all(|p| p.iter().all(|&c| c > 0.0 && c < 1.0)));
        assert_eq!(g.point(1), &[0.4, 0.2]);
        assert_eq!(g.point(4), &[0.2, 0.4]);
        assert!((g.quad_weight() - 0.04).abs() < 1e-15);
        assert!(Grid::<f64>::new(3, 5).is_err());
        assert!(Grid::<f64>::new(1, 1).is_err());
    }

    #[test]
    fn zero_noise_gives_mean_source() {
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap();
        let grid = spec.grid().unwrap();
        let f = spec.evaluate_source(&[0.0; 6], &grid).unwrap();
        for (x, v) in grid.points().zip(f.values()) {
            assert_eq!(*v, 5.0 * x[0] * x[0]);
        }
    }

    #[test]
    fn first_basis_at_midpoint() {
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1d)
            .unwrap()
            .with_cells(2);
        let grid = spec.grid().unwrap();
        let mut z = [0.0; 6];
        z[0] = 1.0;
        let f = spec.evaluate_source(&z, &grid).unwrap();
        assert_eq!(grid.point(0), &[0.5]);
        assert!((f.values()[0] - (5.0 * 0.25 + 0.5f64.sin())).abs() < 1e-15);
    }

    #[test]
    fn basis_indexing_follows_odd_sin_even_cos() {
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap();
        let x = [0.3];
        let expect = [
            (0.3f64).sin(),
            (0.3f64 / 2.0).cos(),
            (0.6f64).sin(),
            (0.1f64).cos(),
            (0.9f64).sin(),
            (0.3f64 / 4.0).cos(),
        ];
        for (phi, e) in spec.phis.iter().zip(expect) {
            assert!((phi(&x) - e).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_noise_length_is_rejected() {
        let spec = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap();
        let grid = spec.grid().unwrap();
        assert!(matches!(
            spec.evaluate_source(&[1.0; 5], &grid),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn builtin_configurations() {
        let p1 = builtin_problem::<f64>(BuiltinProblem::Paper1d).unwrap();
        assert_eq!(p1.m(), 6);
        assert_eq!(p1.alpha, 0.2);
        assert!((p1.cov.sigma(0, 1) - 5.4).abs() < 1e-12);
        assert_eq!(p1.n_cells, 120);
        let p2 = builtin_problem::<f64>(BuiltinProblem::Paper2d).unwrap();
        assert_eq!(p2.m(), 30);
        assert_eq!(p2.control_bounds, Some((-5.0, 0.0)));
        assert_eq!(p2.grid().unwrap().len(), 361);
        let t = builtin_problem::<f64>(BuiltinProblem::Paper1dTruncated).unwrap();
        assert_eq!(t.support_radius(), Some(6.0));
        assert_eq!(p1.support_radius(), None);
        assert_eq!(t.dim, p1.dim);
        assert_eq!(t.n_cells, p1.n_cells);
        assert_eq!(t.control_bounds, p1.control_bounds);
        assert_eq!(t.cov.sigma_matrix(), p1.cov.sigma_matrix());
        assert!("paper_3d".parse::<BuiltinProblem>().is_err());
    }

    #[test]
    fn builtin_is_deterministic() {
        let a = builtin_problem::<f64>(BuiltinProblem::Paper2d).unwrap();
        let b = builtin_problem::<f64>(BuiltinProblem::Paper2d).unwrap();
        let grid = a.grid().unwrap();
        let z: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(
            a.evaluate_source(&z, &grid).unwrap().values(),
            b.evaluate_source(&z, &grid).unwrap().values()
        );
    }

    #[test]
    fn field_inner_product() {
        let g = Arc::new(Grid::<f64>::new(1, 4).unwrap());
        let a = Field::new(g.clone(), vec![1.0, 2.0, 3.0]).unwrap();
        let b = Field::constant(g.clone(), 2.0);
        assert!((a.dot(&b).unwrap() - 3.0).abs() < 1e-15);
        assert!(Field::new(g, vec![1.0]).is_err());
    }
}
