use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::BroadcastTable;
use crate::barrier::{AlphaFunction, PsiCascade, SafeSetFunction};
use crate::dynamics::{AgentModel, Layout};
use crate::error::{Error, Result};
use crate::polytope::{instantiate, Halfspaces};
use crate::solvers::{gamma_value, solve_qp, umax_point, umin_point, AgentLie, Extremum, QpProblem, SolveKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStatus {
    /// The QP was solved and the safety row holds.
    Optimal,
    /// The QP was infeasible; the best-effort input was applied.
    Fallback,
}

/// Linear safety row `a . u_D <= b` over the decision agents' stacked inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SafetyRow {
    pub a: DVector<f64>,
    pub b: f64,
}

impl SafetyRow {
    /// `b - a . u`; nonnegative when the row holds.
    pub fn slack(&self, u: &DVector<f64>) -> f64 {
        self.b - self.a.dot(u)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    /// One input per decision agent.
    pub u: Vec<DVector<f64>>,
    pub status: FilterStatus,
    /// Safety row at the sampled state; `None` when no constraint is active
    /// (empty barrier).
    pub row: Option<SafetyRow>,
    pub row_slack: f64,
}

/// Worst-case contribution `sum_j gamma_j^max` of every agent outside `team`.
pub fn adversary_envelope(models: &[AgentModel], x: &DVector<f64>, lie: &[AgentLie], team: &[usize]) -> Result<f64> {
    let layout = Layout::states(models);
    let mut total = 0.0;
    for (j, m) in models.iter().enumerate() {
        if team.contains(&j) {
            continue;
        }
        if lie[j].lf == 0.0 && lie[j].lg.iter().all(|v| *v == 0.0) {
            continue;
        }
        let set = instantiate(&m.input_set, &layout.slice(x, j))?;
        total += gamma_value(&lie[j], &set, Extremum::Max)?;
    }
    Ok(total)
}

/// Input maximizing agent `agent`'s contribution to the barrier derivative.
pub fn adversarial_input(
    models: &[AgentModel],
    agent: usize,
    barrier: &dyn SafeSetFunction,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let layout = Layout::states(models);
    let lie = barrier.lie_terms(models, x)?;
    let set = instantiate(&models[agent].input_set, &layout.slice(x, agent))?;
    umax_point(&lie[agent], &set)
}

/// Solves `min |u_D - u_nom|^2` subject to each decision agent's polytope and
/// the safety row; falls back to per-agent best-effort inputs if infeasible.
fn solve_filter(
    decision: &[usize],
    sets: &[Halfspaces],
    lie: &[AgentLie],
    row: Option<SafetyRow>,
    nominal: &[DVector<f64>],
) -> Result<FilterOutcome> {
    let dims: Vec<usize> = sets.iter().map(|s| s.dim()).collect();
    let layout = Layout::from_dims(dims);
    let m = layout.total();
    let q: usize = sets.iter().map(|s| s.rows()).sum::<usize>() + usize::from(row.is_some());
    let mut a = DMatrix::zeros(q, m);
    let mut b = DVector::zeros(q);
    let mut r0 = 0;
    for (k, set) in sets.iter().enumerate() {
        a.view_mut((r0, layout.offsets[k]), (set.rows(), set.dim())).copy_from(&set.a);
        b.rows_mut(r0, set.rows()).copy_from(&set.b);
        r0 += set.rows();
    }
    if let Some(r) = &row {
        a.row_mut(r0).copy_from(&r.a.transpose());
        b[r0] = r.b;
    }
    let target = layout.stack(nominal);
    let sol = solve_qp(&QpProblem { target, a, b })?;
    let (u, status) = match sol.status.kind {
        SolveKind::Optimal => (sol.u, FilterStatus::Optimal),
        SolveKind::Infeasible => {
            let blocks = decision.iter().zip(sets).map(|(&i, set)| umin_point(&lie[i], set)).collect::<Result<Vec<_>>>()?;
            (layout.stack(&blocks), FilterStatus::Fallback)
        }
        SolveKind::NumericalFailure => {
            return Err(Error::NumericalFailure(format!(
                "safety QP stopped after {} iterations (KKT residual {:e})",
                sol.status.iterations, sol.status.kkt_residual
            )))
        }
    };
    let row_slack = row.as_ref().map(|r| r.slack(&u)).unwrap_or(f64::INFINITY);
    Ok(FilterOutcome { u: (0..decision.len()).map(|k| layout.slice(&u, k)).collect(), status, row, row_slack })
}

/// Builds the safety row
/// `sum_{i in D} (L_f + L_g u_i) + fixed + alpha(value) + margin <= 0`.
fn safety_row(
    decision: &[usize],
    lie: &[AgentLie],
    value: f64,
    alpha: &AlphaFunction,
    margin: f64,
    fixed: f64,
) -> Option<SafetyRow> {
    if !value.is_finite() {
        return None;
    }
    let m: usize = decision.iter().map(|&i| lie[i].lg.len()).sum();
    let mut a = DVector::zeros(m);
    let mut off = 0;
    let mut lf = 0.0;
    for &i in decision {
        let k = lie[i].lg.len();
        a.rows_mut(off, k).copy_from(&lie[i].lg);
        off += k;
        lf += lie[i].lf;
    }
    Some(SafetyRow { a, b: -(lf + fixed + alpha.eval(value) + margin) })
}

fn team_of(models: &[AgentModel], agent: usize) -> Vec<usize> {
    (0..models.len()).filter(|&k| models[k].role == models[agent].role).collect()
}

/// Joint filter over all normal agents at a common sampling instant. The
/// nominal inputs are listed in agent order, one per normal agent.
pub fn centralized_filter(
    models: &[AgentModel],
    x: &DVector<f64>,
    barrier: &dyn SafeSetFunction,
    alpha: &AlphaFunction,
    margin: f64,
    nominal: &[DVector<f64>],
) -> Result<FilterOutcome> {
    let layout = Layout::states(models);
    let decision: Vec<usize> = (0..models.len()).filter(|&i| models[i].is_normal()).collect();
    if nominal.len() != decision.len() {
        return Err(Error::Dimension("one nominal input per normal agent required".into()));
    }
    let value = barrier.value(models, x)?;
    let lie = barrier.lie_terms(models, x)?;
    let fixed = adversary_envelope(models, x, &lie, &decision)?;
    let sets = decision.iter().map(|&i| instantiate(&models[i].input_set, &layout.slice(x, i))).collect::<Result<Vec<_>>>()?;
    let row = safety_row(&decision, &lie, value, alpha, margin, fixed);
    solve_filter(&decision, &sets, &lie, row, nominal)
}

/// Agent-local filter: teammates (agents sharing `agent`'s role) enter with
/// their last broadcast inputs, everyone else with their worst case.
#[allow(clippy::too_many_arguments)]
pub fn distributed_filter(
    agent: usize,
    models: &[AgentModel],
    x: &DVector<f64>,
    broadcast: &BroadcastTable,
    barrier: &dyn SafeSetFunction,
    alpha: &AlphaFunction,
    margin: f64,
    nominal: &DVector<f64>,
) -> Result<FilterOutcome> {
    let layout = Layout::states(models);
    let team = team_of(models, agent);
    let value = barrier.value(models, x)?;
    let lie = barrier.lie_terms(models, x)?;
    let mut fixed = adversary_envelope(models, x, &lie, &team)?;
    for &l in team.iter().filter(|&&l| l != agent) {
        let u_hat = broadcast
            .input(agent, l)
            .ok_or_else(|| Error::Scenario(format!("agent {agent} has no broadcast entry for agent {l}")))?;
        fixed += lie[l].contribution(u_hat);
    }
    let set = instantiate(&models[agent].input_set, &layout.slice(x, agent))?;
    let row = safety_row(&[agent], &lie, value, alpha, margin, fixed);
    solve_filter(&[agent], &[set], &lie, row, std::slice::from_ref(nominal))
}

/// [`distributed_filter`] applied to the last level of a cascade, with its
/// last class-K function and the margin `eta'`.
#[allow(clippy::too_many_arguments)]
pub fn high_order_filter(
    agent: usize,
    models: &[AgentModel],
    x: &DVector<f64>,
    broadcast: &BroadcastTable,
    cascade: &PsiCascade,
    margin: f64,
    nominal: &DVector<f64>,
) -> Result<FilterOutcome> {
    distributed_filter(agent, models, x, broadcast, &cascade.top(), &cascade.top_alpha(), margin, nominal)
}
