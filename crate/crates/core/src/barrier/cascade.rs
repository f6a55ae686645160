//! High-relative-degree cascade `psi_0 = h`, `psi_j = psi_{j-1}' + alpha_j(psi_{j-1})`.
//!
//! Derivatives are taken along the drift only, since inputs must not appear
//! before the last level. The first level also carries the constant `xi`
//! that bounds the disturbance contribution.

use nalgebra::DVector;

use super::{AlphaFunction, ComposedBarrier, SafeSetFunction};
use crate::dynamics::{AgentModel, ControlAffine, Layout};
use crate::error::{Error, Result};

/// Central-difference step for levels above the first.
pub const FD_STEP: f64 = 1e-6;
/// Inputs whose sensitivity stays below this (relative) are treated as absent.
pub const RELATIVE_DEGREE_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct PsiCascade {
    pub barrier: ComposedBarrier,
    /// `alpha_1 .. alpha_q`.
    pub alphas: Vec<AlphaFunction>,
    pub xi: f64,
}

fn stacked_drift(models: &[AgentModel], layout: &Layout, x: &DVector<f64>) -> DVector<f64> {
    let blocks: Vec<DVector<f64>> = (0..models.len()).map(|i| models[i].dynamics.drift(&layout.slice(x, i))).collect();
    layout.stack(&blocks)
}

/// `J_F(x)^T w` for the block-diagonal drift Jacobian.
fn drift_jacobian_t(models: &[AgentModel], layout: &Layout, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let blocks: Vec<DVector<f64>> = (0..models.len())
        .map(|i| models[i].dynamics.drift_jacobian(&layout.slice(x, i)).transpose() * layout.slice(w, i))
        .collect();
    layout.stack(&blocks)
}

impl PsiCascade {
    /// Relative degree `q`.
    pub fn order(&self) -> usize {
        self.alphas.len()
    }

    /// The same cascade over a different atom set.
    pub fn with_barrier(&self, barrier: ComposedBarrier) -> Self {
        Self { barrier, alphas: self.alphas.clone(), xi: self.xi }
    }

    /// `alpha_q`, applied to `psi_{q-1}` in the safety filter.
    pub fn top_alpha(&self) -> AlphaFunction {
        self.alphas[self.order() - 1]
    }

    /// The function the filter enforces: `psi_{q-1}`.
    pub fn top(&self) -> CascadeLevel<'_> {
        CascadeLevel { cascade: self, level: self.order() - 1 }
    }

    pub fn level(&self, level: usize) -> CascadeLevel<'_> {
        CascadeLevel { cascade: self, level }
    }

    pub fn psi(&self, models: &[AgentModel], x: &DVector<f64>, level: usize) -> Result<f64> {
        if level == 0 {
            return Ok(self.barrier.eval_h(models, x));
        }
        if self.barrier.atoms.is_empty() {
            return Ok(f64::NEG_INFINITY);
        }
        let layout = Layout::states(models);
        let prev = self.psi(models, x, level - 1)?;
        let grad = self.grad_psi(models, x, level - 1)?;
        let shift = if level == 1 { self.xi } else { 0.0 };
        Ok(grad.dot(&stacked_drift(models, &layout, x)) + shift + self.alphas[level - 1].eval(prev))
    }

    /// `psi_0 .. psi_{q-1}`.
    pub fn psi_levels(&self, models: &[AgentModel], x: &DVector<f64>) -> Result<Vec<f64>> {
        (0..self.order()).map(|j| self.psi(models, x, j)).collect()
    }

    pub fn grad_psi(&self, models: &[AgentModel], x: &DVector<f64>, level: usize) -> Result<DVector<f64>> {
        if self.barrier.atoms.is_empty() {
            return Ok(DVector::zeros(x.len()));
        }
        match level {
            0 => self.barrier.grad_h(models, x),
            1 => {
                let layout = Layout::states(models);
                let gh = self.barrier.grad_h(models, x)?;
                let f = stacked_drift(models, &layout, x);
                let h = self.barrier.eval_h(models, x);
                Ok(self.barrier.hess_vec(models, x, &f)?
                    + drift_jacobian_t(models, &layout, x, &gh)
                    + gh * self.alphas[0].derivative(h))
            }
            _ => {
                let mut g = DVector::zeros(x.len());
                for k in 0..x.len() {
                    let step = FD_STEP * (1.0 + x[k].abs());
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += step;
                    xm[k] -= step;
                    g[k] = (self.psi(models, &xp, level)? - self.psi(models, &xm, level)?) / (2.0 * step);
                }
                Ok(g)
            }
        }
    }

    /// Largest `|L_{g_i} psi_j|` over agents, per level `j < q - 1`, at `x`.
    /// Inputs must not enter any level below the last one.
    fn check_relative_degree(&self, models: &[AgentModel], x: &DVector<f64>) -> Result<()> {
        let layout = Layout::states(models);
        for level in 0..self.order() - 1 {
            let grad = self.grad_psi(models, x, level)?;
            let tol = RELATIVE_DEGREE_TOL * (1.0 + grad.norm());
            for (i, m) in models.iter().enumerate() {
                let xi = layout.slice(x, i);
                let lg = m.dynamics.actuation(&xi).transpose() * layout.slice(&grad, i);
                if lg.amax() > tol {
                    return Err(Error::RelativeDegreeMismatch { agent: i, level: level + 1 });
                }
            }
        }
        Ok(())
    }
}

/// One level of a cascade viewed as a safe-set function.
#[derive(Clone, Copy, Debug)]
pub struct CascadeLevel<'a> {
    cascade: &'a PsiCascade,
    level: usize,
}

impl CascadeLevel<'_> {
    pub fn index(&self) -> usize {
        self.level
    }
}

impl SafeSetFunction for CascadeLevel<'_> {
    fn value(&self, models: &[AgentModel], x: &DVector<f64>) -> Result<f64> {
        self.cascade.psi(models, x, self.level)
    }

    fn gradient(&self, models: &[AgentModel], x: &DVector<f64>) -> Result<DVector<f64>> {
        self.cascade.grad_psi(models, x, self.level)
    }
}

/// Builds a cascade of order `alphas.len()` and checks at every probe state
/// that no input appears before the last level.
pub fn build_cascade(
    barrier: ComposedBarrier,
    alphas: Vec<AlphaFunction>,
    xi: f64,
    models: &[AgentModel],
    probes: &[DVector<f64>],
) -> Result<PsiCascade> {
    if alphas.is_empty() {
        return Err(Error::Scenario("cascade needs at least one alpha".into()));
    }
    for a in &alphas {
        a.validate()?;
    }
    if !(xi >= 0.0) {
        return Err(Error::Scenario("xi must be nonnegative".into()));
    }
    let cascade = PsiCascade { barrier, alphas, xi };
    for x in probes {
        cascade.check_relative_degree(models, x)?;
    }
    Ok(cascade)
}
