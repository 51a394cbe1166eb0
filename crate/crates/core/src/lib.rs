//! Numerical solution of boundary-value problems for differential inclusions
//! by steepest superdifferential descent on a penalty functional.

pub mod cli;
pub mod descent;
pub mod expr;
pub mod findim;
pub mod functionals;
pub mod gradcheck;
pub mod grid;
pub mod problem;
pub mod superdiff;

pub use descent::{solve, DescentReport, SolverConfig, Termination};
pub use expr::Expr;
pub use grid::{Grid, Trajectory};
pub use problem::Problem;
