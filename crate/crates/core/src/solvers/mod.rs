//! Dense LP and QP solvers sized for per-agent safety filters.

pub mod lp;
pub mod qp;
pub mod simplex;
pub mod value;

pub use lp::{solve_lp, LpProblem, LpSolution};
pub use qp::{solve_qp, QpProblem, QpSolution};
pub use value::{gamma_value, umax_point, umin_point, AgentLie, Extremum};

/// Primal feasibility tolerance reported solutions must meet.
pub const FEAS_TOL: f64 = 1e-8;
/// KKT stationarity tolerance reported solutions must meet.
pub const STATIONARITY_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveKind {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// Outcome certificate of a solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStatus {
    pub kind: SolveKind,
    pub iterations: usize,
    pub kkt_residual: f64,
}
