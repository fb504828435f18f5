//! Sparse recovery for systems of polynomial equations through lifting to a
//! semidefinite program over monomials.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod baselines;
pub mod error;
pub mod formats;
pub mod harness;
pub mod lifting;
pub mod monomials;
pub mod recovery;
pub mod scalar;
pub mod sdp_admm;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Polynomial = monomials::Polynomial<f64>;
pub type SymMatrix = lifting::SymMatrix<f64>;
pub type LiftedProblem = lifting::LiftedProblem<f64>;
pub type SolverConfig = sdp_admm::SolverConfig<f64>;
pub type SolveReport = sdp_admm::SolveReport<f64>;
pub type RecoveredSolution = recovery::RecoveredSolution<f64>;
pub type BaselineResult = baselines::BaselineResult<f64>;
pub type PipelineConfig = baselines::PipelineConfig<f64>;
