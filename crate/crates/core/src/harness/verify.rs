//! Independent re-verification of a recorded trace.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::trace::Trace;
use crate::dynamics::Layout;
use crate::error::Result;

/// Largest gap tolerated between logged and recomputed `h_tot`.
pub const LOG_MATCH_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub steps_checked: usize,
    pub max_h_tot: f64,
    /// First recorded step with `h_tot > 0`.
    pub first_violation: Option<f64>,
    pub fallback_count: usize,
    /// Largest `psi_j` per level over the recorded steps.
    pub max_psi: Vec<f64>,
    /// Recorded steps with `psi_j > 0`, per level.
    pub psi_violations: Vec<usize>,
    /// Largest `|logged h_tot - recomputed h_tot|`.
    pub max_log_mismatch: f64,
    /// Smallest safety-row slack seen at a sample, when the trace kept it.
    pub min_row_slack: Option<f64>,
}

impl VerifyReport {
    /// Safe, and the logged values agree with the recomputation.
    pub fn passed(&self) -> bool {
        self.first_violation.is_none() && self.psi_violations.iter().all(|&c| c == 0) && self.max_log_mismatch <= LOG_MATCH_TOL
    }
}

/// Plain `max + ln(1 + sum exp(rho (a - max))) / rho`, summing the smaller
/// terms in ascending order.
pub fn naive_log_sum_exp(values: &[f64], rho: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let Some(&top) = v.last() else {
        return f64::NEG_INFINITY;
    };
    let rest: f64 = v[..v.len() - 1].iter().map(|a| (rho * (a - top)).exp()).sum();
    top + rest.ln_1p() / rho
}

/// Recomputes `h_tot` (and every cascade level, using the run's `xi`) from
/// the raw states of the step rows in `trace`.
pub fn verify_invariance(trace: &Trace, scenario: &Scenario, xi: f64) -> Result<VerifyReport> {
    let models = scenario.models();
    let layout = Layout::states(&models);
    let barrier = scenario.barrier()?;
    let cascade = scenario.cascade(xi)?;
    let order = scenario.order();
    let mut report = VerifyReport {
        steps_checked: 0,
        max_h_tot: f64::NEG_INFINITY,
        first_violation: None,
        fallback_count: trace.summary.fallback_count,
        max_psi: vec![f64::NEG_INFINITY; order],
        psi_violations: vec![0; order],
        max_log_mismatch: 0.0,
        min_row_slack: trace.summary.min_row_slack,
    };
    for row in trace.steps() {
        let x = DVector::from_column_slice(&row.x);
        let atoms: Vec<f64> = barrier.atoms.iter().map(|a| a.eval(&models, &layout, &x)).collect();
        let h = naive_log_sum_exp(&atoms, barrier.rho);
        report.steps_checked += 1;
        if h.is_finite() || row.h_tot.is_finite() {
            report.max_log_mismatch = report.max_log_mismatch.max((h - row.h_tot).abs());
        }
        report.max_h_tot = report.max_h_tot.max(h);
        if h > 0.0 && report.first_violation.is_none() {
            report.first_violation = Some(row.t);
        }
        for j in 0..order {
            let psi = if j == 0 { h } else { cascade.psi(&models, &x, j)? };
            report.max_psi[j] = report.max_psi[j].max(psi);
            if psi > 0.0 {
                report.psi_violations[j] += 1;
            }
        }
    }
    Ok(report)
}
