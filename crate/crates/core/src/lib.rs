//! Optimal control of a Poisson problem with a Gaussian random source under
//! probabilistic or almost sure uniform state constraints.
//!
//! The numerical kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below name the double precision instantiations used by the
//! experiment runner.

pub mod chance_opt;
pub mod distributions;
pub mod error;
pub mod linalg;
pub mod moreau_yosida;
pub mod pde;
pub mod problem;
pub mod robust;
pub mod scalar;
pub mod srd;

pub use error::{Error, Result};
pub use problem::{builtin_problem, BuiltinProblem, Field, Grid, ProblemSpec};
pub use scalar::Scalar;

pub type Field64 = problem::Field<f64>;
pub type Grid64 = problem::Grid<f64>;
pub type ProblemSpec64 = problem::ProblemSpec<f64>;
pub type LaplacianOperator64 = pde::LaplacianOperator<f64>;
pub type StateBundle64 = pde::StateBundle<f64>;
pub type CovarianceModel64 = distributions::CovarianceModel<f64>;
pub type SrdEstimate64 = srd::SrdEstimate<f64>;

pub type Field32 = problem::Field<f32>;
pub type ProblemSpec32 = problem::ProblemSpec<f32>;
