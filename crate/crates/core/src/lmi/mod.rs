//! Small dense semidefinite / max-det solver over structured matrix variables.
//!
//! Programs are built from [`MatrixVariable`]s whose scalars live in one decision
//! vector, [`AffineExpr`]s over that vector, and [`AffineBlock`] constraints. The
//! solver is a primal log-barrier path-following method with a phase-I feasibility
//! search; linear equalities are eliminated before the interior-point iterations.

pub mod expr;
mod program;
mod solver;

pub use expr::AffineExpr;
pub use program::{
    logdet, min_eigenvalue, AffineBlock, LinearEquality, MatrixVariable, MaxDetProgram, Objective, Sense, Structure,
};
pub use solver::{check_point, solve, SolveReport, SolveStatus, SolverOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("block {0} is not symmetric")]
    NotSymmetric(String),
    #[error("equality constraints are inconsistent (residual {0:.3e})")]
    InconsistentEqualities(f64),
    #[error("invalid solver options: {0}")]
    Options(String),
}
