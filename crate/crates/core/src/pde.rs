//! Finite difference Dirichlet Laplacian, its reusable factorization, and the
//! superposition states built on it.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{arg, Result};
use crate::linalg::BandCholesky;
use crate::problem::{Field, Grid, ProblemSpec};
use crate::scalar::{count, Scalar};

/// `-Δ` on the interior nodes with homogeneous Dirichlet data, factored once.
///
/// 1D: tridiagonal `(−1, 2, −1)/h²`. 2D: five-point stencil `(4, −1 ×4)/h²`,
/// banded with half-bandwidth `n_cells − 1`.
#[derive(Debug, Clone)]
pub struct LaplacianOperator<T> {
    grid: Arc<Grid<T>>,
    inv_h2: T,
    factor: BandCholesky<T>,
}

impl<T: Scalar> LaplacianOperator<T> {
    pub fn new(grid: Arc<Grid<T>>) -> Result<Self> {
        let h = grid.mesh_width();
        let inv_h2 = T::one() / (h * h);
        let bw = if grid.dim() == 1 { 1 } else { grid.per_axis() };
        let g = grid.clone();
        let factor = BandCholesky::factor(grid.len(), bw, move |i, j| stencil(&g, inv_h2, i, j))?;
        Ok(Self {
            grid,
            inv_h2,
            factor,
        })
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    /// Matrix entry `A_ij`.
    pub fn entry(&self, i: usize, j: usize) -> T {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        stencil(&self.grid, self.inv_h2, hi, lo)
    }

    /// `A y`
    pub fn apply(&self, y: &Field<T>) -> Result<Field<T>> {
        self.check(y)?;
        let g = &self.grid;
        let n = g.len();
        let per = g.per_axis();
        let v = y.values();
        let mut out = vec![T::zero(); n];
        let diag = if g.dim() == 1 { count::<T>(2) } else { count::<T>(4) };
        for j in 0..n {
            let mut s = diag * v[j];
            for k in neighbours(g.dim(), per, j) {
                s -= v[k];
            }
            out[j] = s * self.inv_h2;
        }
        Field::new(g.clone(), out)
    }

    fn check(&self, f: &Field<T>) -> Result<()> {
        if f.grid().dim() == self.grid.dim() && f.grid().n_cells() == self.grid.n_cells() {
            Ok(())
        } else {
            arg("field and operator live on different grids")
        }
    }

    /// Solves `A y = rhs` in place on raw nodal values.
    pub fn solve_values(&self, values: &mut [T]) {
        self.factor.solve_in_place(values);
    }

    pub fn solve(&self, rhs: &Field<T>) -> Result<Field<T>> {
        self.check(rhs)?;
        let mut v = rhs.values().to_vec();
        self.factor.solve_in_place(&mut v);
        Field::new(self.grid.clone(), v)
    }

    /// Riesz representative of `h ↦ (A⁻¹h)(x_node)` in the discrete L² product:
    /// `A⁻¹ e_node / w`.
    pub fn green_row(&self, node: usize) -> Result<Field<T>> {
        let n = self.grid.len();
        if node >= n {
            return arg(format!("node index {node} out of range (grid has {n} nodes)"));
        }
        let mut v = vec![T::zero(); n];
        v[node] = T::one() / self.grid.quad_weight();
        self.factor.solve_in_place(&mut v);
        Field::new(self.grid.clone(), v)
    }

    /// Dense `A⁻¹`, row-major (symmetric).
    pub fn inverse(&self) -> Vec<T> {
        let n = self.grid.len();
        let cols: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                self.factor.solve_in_place(&mut e);
                e
            })
            .collect();
        let mut out = vec![T::zero(); n * n];
        for (j, col) in cols.into_iter().enumerate() {
            for (i, v) in col.into_iter().enumerate() {
                out[i * n + j] = v;
            }
        }
        out
    }
}

fn neighbours(dim: usize, per: usize, j: usize) -> impl Iterator<Item = usize> {
    let mut out = [usize::MAX; 4];
    if dim == 1 {
        if j > 0 {
            out[0] = j - 1;
        }
        if j + 1 < per {
            out[1] = j + 1;
        }
    } else {
        let (i0, i1) = (j % per, j / per);
        if i0 > 0 {
            out[0] = j - 1;
        }
        if i0 + 1 < per {
            out[1] = j + 1;
        }
        if i1 > 0 {
            out[2] = j - per;
        }
        if i1 + 1 < per {
            out[3] = j + per;
        }
    }
    out.into_iter().filter(|&k| k != usize::MAX)
}

/// Lower-triangle entry `A_ij`, `j <= i`.
fn stencil<T: Scalar>(grid: &Grid<T>, inv_h2: T, i: usize, j: usize) -> T {
    if i == j {
        return count::<T>(2 * grid.dim()) * inv_h2;
    }
    let per = grid.per_axis();
    let adjacent = if grid.dim() == 1 {
        i - j == 1
    } else {
        (i - j == 1 && i % per != 0) || i - j == per
    };
    if adjacent {
        -inv_h2
    } else {
        T::zero()
    }
}

pub fn solve_poisson<T: Scalar>(op: &LaplacianOperator<T>, rhs: &Field<T>) -> Result<Field<T>> {
    op.solve(rhs)
}

pub fn green_row<T: Scalar>(op: &LaplacianOperator<T>, node: usize) -> Result<Field<T>> {
    op.green_row(node)
}

/// Control-independent states: `A⁻¹ f0` and the basic states `A⁻¹ φ_i`.
#[derive(Debug, Clone)]
pub struct BasisStates<T> {
    f0_state: Field<T>,
    states: Vec<Field<T>>,
    /// `node_major[j * m + i] = y⁽ⁱ⁾(x_j)`
    node_major: Vec<T>,
}

impl<T: Scalar> BasisStates<T> {
    pub fn new(spec: &ProblemSpec<T>, op: &LaplacianOperator<T>) -> Result<Self> {
        let grid = op.grid();
        if grid.dim() != spec.dim || grid.n_cells() != spec.n_cells {
            return arg("operator grid does not match the problem resolution");
        }
        let f0_state = op.solve(&spec.mean_source(grid))?;
        let states = (0..spec.m())
            .map(|i| op.solve(&spec.basis_source(i, grid)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_states(f0_state, states))
    }

    pub fn from_states(f0_state: Field<T>, states: Vec<Field<T>>) -> Self {
        let n = f0_state.len();
        let m = states.len();
        let mut node_major = vec![T::zero(); n * m];
        for (i, s) in states.iter().enumerate() {
            for (j, &v) in s.values().iter().enumerate() {
                node_major[j * m + i] = v;
            }
        }
        Self {
            f0_state,
            states,
            node_major,
        }
    }

    pub fn m(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Field<T>] {
        &self.states
    }

    pub fn f0_state(&self) -> &Field<T> {
        &self.f0_state
    }

    /// `(y⁽¹⁾(x_j), …, y⁽ᵐ⁾(x_j))`
    pub fn node_coeffs(&self, node: usize) -> &[T] {
        let m = self.m();
        &self.node_major[node * m..(node + 1) * m]
    }

    /// `Σ_i z_i y⁽ⁱ⁾(x_j)` at a node.
    #[inline]
    pub fn combine_at(&self, node: usize, z: &[T]) -> T {
        self.node_coeffs(node)
            .iter()
            .zip(z)
            .map(|(&a, &b)| a * b)
            .sum()
    }
}

/// Mean state for one control plus shared basic states.
#[derive(Debug, Clone)]
pub struct StateBundle<T> {
    pub control: Field<T>,
    pub mean_state: Field<T>,
    basis: Arc<BasisStates<T>>,
}

impl<T: Scalar> StateBundle<T> {
    pub fn new(basis: Arc<BasisStates<T>>, op: &LaplacianOperator<T>, u: &Field<T>) -> Result<Self> {
        let mut mean_state = op.solve(u)?;
        mean_state.axpy(T::one(), basis.f0_state());
        Ok(Self {
            control: u.clone(),
            mean_state,
            basis,
        })
    }

    /// Builds directly from a mean state (used for synthetic configurations).
    pub fn from_parts(control: Field<T>, mean_state: Field<T>, basis: Arc<BasisStates<T>>) -> Self {
        Self {
            control,
            mean_state,
            basis,
        }
    }

    /// Same basic states, new control.
    pub fn with_control(&self, op: &LaplacianOperator<T>, u: &Field<T>) -> Result<Self> {
        Self::new(self.basis.clone(), op, u)
    }

    pub fn basis(&self) -> &Arc<BasisStates<T>> {
        &self.basis
    }

    pub fn basic_states(&self) -> &[Field<T>] {
        self.basis.states()
    }

    pub fn m(&self) -> usize {
        self.basis.m()
    }

    /// `S(u, z) = ȳ + Σ z_i y⁽ⁱ⁾`
    pub fn superpose(&self, z: &[T]) -> Result<Field<T>> {
        if z.len() != self.m() {
            return arg(format!("noise vector has length {}, expected {}", z.len(), self.m()));
        }
        let values = (0..self.mean_state.len())
            .map(|j| self.mean_state.values()[j] + self.basis.combine_at(j, z))
            .collect();
        Field::new(self.mean_state.grid().clone(), values)
    }
}

pub fn precompute_states<T: Scalar>(
    spec: &ProblemSpec<T>,
    op: &LaplacianOperator<T>,
    u: &Field<T>,
) -> Result<StateBundle<T>> {
    let basis = Arc::new(BasisStates::new(spec, op)?);
    StateBundle::new(basis, op, u)
}
