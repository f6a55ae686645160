//! Per-agent value functions: the best and worst contribution an agent can
//! make to the barrier derivative over its input polytope.

use nalgebra::DVector;

use super::lp::{solve_lp, LpProblem};
use crate::error::Result;
use crate::polytope::Halfspaces;

/// Lie derivatives of a safe-set function along one agent's drift and actuation.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentLie {
    pub lf: f64,
    pub lg: DVector<f64>,
}

impl AgentLie {
    /// Contribution `L_f + L_g u`.
    pub fn contribution(&self, u: &DVector<f64>) -> f64 {
        self.lf + self.lg.dot(u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

/// `gamma_min` or `gamma_max`: `L_f + opt_u L_g u` over the input polytope.
pub fn gamma_value(lie: &AgentLie, set: &Halfspaces, dir: Extremum) -> Result<f64> {
    let u = match dir {
        Extremum::Min => umin_point(lie, set)?,
        Extremum::Max => umax_point(lie, set)?,
    };
    Ok(lie.contribution(&u))
}

/// Arg-min of `L_g u`: the strongest safety-restoring input.
pub fn umin_point(lie: &AgentLie, set: &Halfspaces) -> Result<DVector<f64>> {
    let sol = solve_lp(&LpProblem { c: lie.lg.clone(), a: set.a.clone(), b: set.b.clone() })?;
    Ok(sol.u)
}

/// Arg-max of `L_g u`: the worst-case adversarial input.
pub fn umax_point(lie: &AgentLie, set: &Halfspaces) -> Result<DVector<f64>> {
    let sol = solve_lp(&LpProblem { c: -lie.lg.clone(), a: set.a.clone(), b: set.b.clone() })?;
    Ok(sol.u)
}
