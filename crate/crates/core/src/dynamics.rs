//! Heterogeneous control-affine agents and the sampled-data closed loop.
//!
//! Each agent evolves as `x_i' = f_i(x_i) + g_i(x_i) u_i + phi_i(t)` where `u_i`
//! is held constant between the agent's sampling instants. States of all agents
//! are stacked into one vector; [`Layout`] records the per-agent slices.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polytope::{instantiate, PolytopeSpec};

/// A control-affine vector field together with the map from state to the
/// position used by collision barriers.
pub trait ControlAffine: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn actuation(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Jacobian of the drift; central differences unless overridden.
    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..n {
            let h = 1e-6 * (1.0 + x[k].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let col = (self.drift(&xp) - self.drift(&xm)) / (2.0 * h);
            jac.set_column(k, &col);
        }
        jac
    }

    /// Whether the drift is affine in the state, so its Jacobian is exact.
    fn affine_drift(&self) -> bool {
        false
    }

    fn position_dim(&self) -> usize {
        self.state_dim()
    }

    fn position(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn position_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len())
    }

    /// `sum_k w_k * Hessian(p_k)(x)` for the position map `p`.
    fn position_curvature(&self, x: &DVector<f64>, _w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

/// A user-provided model that cannot be serialized.
#[derive(Clone)]
pub struct CustomDynamics(pub Arc<dyn ControlAffine>);

impl fmt::Debug for CustomDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomDynamics(n={}, m={})", self.0.state_dim(), self.0.input_dim())
    }
}

/// Built-in agent models.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    /// `x' = u`.
    SingleIntegrator { dim: usize },
    /// State `(p, v)`, `p' = v`, `v' = -damping * v + u`.
    DoubleIntegrator { dim: usize, damping: f64 },
    /// Unicycle `(x, y, theta)` driven through the velocity of the look-ahead
    /// point `p = (x + b cos theta, y + b sin theta)`, so that `p' = u`.
    Unicycle { b_offset: f64 },
    #[serde(skip)]
    Custom(CustomDynamics),
}

impl ControlAffine for Dynamics {
    fn state_dim(&self) -> usize {
        match self {
            Dynamics::SingleIntegrator { dim } => *dim,
            Dynamics::DoubleIntegrator { dim, .. } => 2 * dim,
            Dynamics::Unicycle { .. } => 3,
            Dynamics::Custom(c) => c.0.state_dim(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Dynamics::SingleIntegrator { dim } | Dynamics::DoubleIntegrator { dim, .. } => *dim,
            Dynamics::Unicycle { .. } => 2,
            Dynamics::Custom(c) => c.0.input_dim(),
        }
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Dynamics::SingleIntegrator { dim } => DVector::zeros(*dim),
            Dynamics::DoubleIntegrator { dim, damping } => {
                let d = *dim;
                let mut out = DVector::zeros(2 * d);
                for k in 0..d {
                    out[k] = x[d + k];
                    out[d + k] = -damping * x[d + k];
                }
                out
            }
            Dynamics::Unicycle { .. } => DVector::zeros(3),
            Dynamics::Custom(c) => c.0.drift(x),
        }
    }

    fn actuation(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Dynamics::SingleIntegrator { dim } => DMatrix::identity(*dim, *dim),
            Dynamics::DoubleIntegrator { dim, .. } => {
                let d = *dim;
                let mut g = DMatrix::zeros(2 * d, d);
                for k in 0..d {
                    g[(d + k, k)] = 1.0;
                }
                g
            }
            Dynamics::Unicycle { b_offset } => {
                let (s, c) = x[2].sin_cos();
                DMatrix::from_row_slice(3, 2, &[c * c, c * s, s * c, s * s, -s / b_offset, c / b_offset])
            }
            Dynamics::Custom(c) => c.0.actuation(x),
        }
    }

    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Dynamics::SingleIntegrator { dim } => DMatrix::zeros(*dim, *dim),
            Dynamics::DoubleIntegrator { dim, damping } => {
                let d = *dim;
                let mut j = DMatrix::zeros(2 * d, 2 * d);
                for k in 0..d {
                    j[(k, d + k)] = 1.0;
                    j[(d + k, d + k)] = -damping;
                }
                j
            }
            Dynamics::Unicycle { .. } => DMatrix::zeros(3, 3),
            Dynamics::Custom(c) => c.0.drift_jacobian(x),
        }
    }

    fn affine_drift(&self) -> bool {
        match self {
            Dynamics::Custom(c) => c.0.affine_drift(),
            _ => true,
        }
    }

    fn position_dim(&self) -> usize {
        match self {
            Dynamics::SingleIntegrator { dim } | Dynamics::DoubleIntegrator { dim, .. } => *dim,
            Dynamics::Unicycle { .. } => 2,
            Dynamics::Custom(c) => c.0.position_dim(),
        }
    }

    fn position(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Dynamics::SingleIntegrator { .. } => x.clone(),
            Dynamics::DoubleIntegrator { dim, .. } => x.rows(0, *dim).into_owned(),
            Dynamics::Unicycle { b_offset } => {
                let (s, c) = x[2].sin_cos();
                DVector::from_column_slice(&[x[0] + b_offset * c, x[1] + b_offset * s])
            }
            Dynamics::Custom(c) => c.0.position(x),
        }
    }

    fn position_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Dynamics::SingleIntegrator { dim } => DMatrix::identity(*dim, *dim),
            Dynamics::DoubleIntegrator { dim, .. } => DMatrix::identity(*dim, 2 * dim),
            Dynamics::Unicycle { b_offset } => {
                let (s, c) = x[2].sin_cos();
                DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -b_offset * s, 0.0, 1.0, b_offset * c])
            }
            Dynamics::Custom(c) => c.0.position_jacobian(x),
        }
    }

    fn position_curvature(&self, x: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Dynamics::Unicycle { b_offset } => {
                let (s, c) = x[2].sin_cos();
                let mut h = DMatrix::zeros(3, 3);
                h[(2, 2)] = -b_offset * (w[0] * c + w[1] * s);
                h
            }
            Dynamics::Custom(c) => c.0.position_curvature(x, w),
            _ => DMatrix::zeros(x.len(), x.len()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Normal,
    Adversarial,
}

/// One agent of the network.
#[derive(Clone, Debug)]
pub struct AgentModel {
    pub id: usize,
    pub dynamics: Dynamics,
    /// Bound on the disturbance norm, in state units per second.
    pub disturbance_bound: f64,
    pub input_set: PolytopeSpec,
    pub role: Role,
}

impl AgentModel {
    pub fn new(id: usize, dynamics: Dynamics, input_set: PolytopeSpec, role: Role) -> Self {
        Self { id, dynamics, disturbance_bound: 0.0, input_set, role }
    }

    pub fn with_disturbance(mut self, bound: f64) -> Self {
        self.disturbance_bound = bound;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn is_normal(&self) -> bool {
        self.role == Role::Normal
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim() == 0 || self.input_dim() == 0 {
            return Err(Error::Scenario(format!("agent {} has an empty state or input", self.id)));
        }
        if !(self.disturbance_bound >= 0.0) {
            return Err(Error::Scenario(format!("agent {} has a negative disturbance bound", self.id)));
        }
        if let Some(m) = self.input_set.input_dim() {
            if m != self.input_dim() {
                return Err(Error::Dimension(format!(
                    "agent {}: input set has dimension {m}, dynamics expect {}",
                    self.id,
                    self.input_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Offsets of each agent's block inside stacked vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub offsets: Vec<usize>,
    pub dims: Vec<usize>,
}

impl Layout {
    pub fn from_dims(dims: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for d in &dims {
            offsets.push(acc);
            acc += d;
        }
        Self { offsets, dims }
    }

    pub fn states(models: &[AgentModel]) -> Self {
        Self::from_dims(models.iter().map(|m| m.state_dim()).collect())
    }

    pub fn inputs(models: &[AgentModel]) -> Self {
        Self::from_dims(models.iter().map(|m| m.input_dim()).collect())
    }

    pub fn total(&self) -> usize {
        self.offsets.last().map(|o| o + self.dims.last().unwrap()).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn slice(&self, v: &DVector<f64>, agent: usize) -> DVector<f64> {
        v.rows(self.offsets[agent], self.dims[agent]).into_owned()
    }

    pub fn set(&self, v: &mut DVector<f64>, agent: usize, block: &DVector<f64>) {
        v.rows_mut(self.offsets[agent], self.dims[agent]).copy_from(block);
    }

    pub fn stack(&self, blocks: &[DVector<f64>]) -> DVector<f64> {
        let mut v = DVector::zeros(self.total());
        for (i, b) in blocks.iter().enumerate() {
            self.set(&mut v, i, b);
        }
        v
    }
}

/// Stacked state of all agents plus their held inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub time: f64,
    pub x: DVector<f64>,
    pub held: Vec<DVector<f64>>,
}

impl SystemState {
    pub fn new(models: &[AgentModel], initial: &[DVector<f64>]) -> Result<Self> {
        if initial.len() != models.len() {
            return Err(Error::Dimension("one initial state per agent required".into()));
        }
        for (m, x0) in models.iter().zip(initial) {
            if x0.len() != m.state_dim() {
                return Err(Error::Dimension(format!("agent {} initial state has wrong length", m.id)));
            }
        }
        let layout = Layout::states(models);
        Ok(Self { time: 0.0, x: layout.stack(initial), held: models.iter().map(|m| DVector::zeros(m.input_dim())).collect() })
    }
}

/// Axis-aligned box of stacked states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl StateBox {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_fn(self.lo.len(), |k, _| {
            if self.hi[k] > self.lo[k] {
                rng.random_range(self.lo[k]..=self.hi[k])
            } else {
                self.lo[k]
            }
        })
    }

    pub fn diagonal(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l).powi(2)).sum::<f64>().sqrt()
    }

    pub fn check(bbox: Option<&StateBox>, dim: usize) -> Result<&StateBox> {
        let b = bbox.ok_or(Error::EmptyBoundingBox)?;
        if b.lo.is_empty() || b.lo.len() != b.hi.len() {
            return Err(Error::EmptyBoundingBox);
        }
        if b.lo.len() != dim {
            return Err(Error::Dimension(format!("bounding box has dimension {}, state has {dim}", b.lo.len())));
        }
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceKind {
    None,
    /// Random vector held for `resample_dt` seconds: uniform direction, norm
    /// uniform in `[0, bound]`.
    PiecewiseConstantRandom {
        resample_dt: f64,
    },
    /// Sum of sinusoids with random phases per component.
    Sinusoidal {
        frequencies: Vec<f64>,
    },
}

impl Default for DisturbanceKind {
    fn default() -> Self {
        DisturbanceKind::PiecewiseConstantRandom { resample_dt: 0.05 }
    }
}

/// Bounded additive disturbance, a pure function of `(seed, agent, t)`.
/// Every agent draws from its own independent stream.
#[derive(Clone, Debug)]
pub struct DisturbanceProcess {
    pub kind: DisturbanceKind,
    pub seed: u64,
    dims: Vec<usize>,
    bounds: Vec<f64>,
    phases: Vec<Vec<f64>>,
}

fn mix(seed: u64, agent: u64, k: u64) -> u64 {
    // splitmix64 over the three keys
    let mut z = seed ^ agent.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ k.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl DisturbanceProcess {
    pub fn new(kind: DisturbanceKind, seed: u64, models: &[AgentModel]) -> Self {
        let dims: Vec<usize> = models.iter().map(|m| m.state_dim()).collect();
        let bounds = models.iter().map(|m| m.disturbance_bound).collect();
        let phases = match &kind {
            DisturbanceKind::Sinusoidal { frequencies } => dims
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64, u64::MAX));
                    (0..n * frequencies.len()).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect()
                })
                .collect(),
            _ => vec![Vec::new(); dims.len()],
        };
        Self { kind, seed, dims, bounds, phases }
    }

    pub fn none(models: &[AgentModel]) -> Self {
        Self::new(DisturbanceKind::None, 0, models)
    }

    pub fn bound(&self, agent: usize) -> f64 {
        self.bounds[agent]
    }

    /// Disturbance acting on agent `agent` at time `t`.
    pub fn value(&self, agent: usize, t: f64) -> DVector<f64> {
        let n = self.dims[agent];
        let bound = self.bounds[agent];
        if bound == 0.0 {
            return DVector::zeros(n);
        }
        match &self.kind {
            DisturbanceKind::None => DVector::zeros(n),
            DisturbanceKind::PiecewiseConstantRandom { resample_dt } => {
                let k = (t / resample_dt).floor().max(0.0) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, agent as u64, k));
                let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = dir.norm();
                if norm == 0.0 {
                    return DVector::zeros(n);
                }
                let magnitude = rng.random_range(0.0..=bound);
                dir * (magnitude / norm)
            }
            DisturbanceKind::Sinusoidal { frequencies } => {
                let nf = frequencies.len();
                if nf == 0 {
                    return DVector::zeros(n);
                }
                let amp = bound / ((n as f64).sqrt() * nf as f64);
                DVector::from_fn(n, |c, _| {
                    frequencies
                        .iter()
                        .enumerate()
                        .map(|(k, f)| (std::f64::consts::TAU * f * t + self.phases[agent][c * nf + k]).sin())
                        .sum::<f64>()
                        * amp
                })
            }
        }
    }
}

/// Closed-loop vector field with held inputs.
fn vector_field(
    models: &[AgentModel],
    layout: &Layout,
    held: &[DVector<f64>],
    disturbance: &DisturbanceProcess,
    t: f64,
    x: &DVector<f64>,
) -> DVector<f64> {
    let mut dx = DVector::zeros(x.len());
    for (i, m) in models.iter().enumerate() {
        let xi = layout.slice(x, i);
        let mut d = m.dynamics.drift(&xi) + m.dynamics.actuation(&xi) * &held[i];
        if m.disturbance_bound > 0.0 {
            d += disturbance.value(i, t);
        }
        layout.set(&mut dx, i, &d);
    }
    dx
}

/// Integrates the closed loop from `state.time` to `t_end` with fixed-step RK4
/// (step at most `dt_max`), holding every input constant.
pub fn integrate_interval(
    models: &[AgentModel],
    state: &SystemState,
    disturbance: &DisturbanceProcess,
    t_end: f64,
    dt_max: f64,
) -> Result<SystemState> {
    integrate_with(models, state, disturbance, t_end, dt_max, |_, _| {})
}

/// Same as [`integrate_interval`], calling `on_step(t, x)` after every RK4 step.
pub fn integrate_with(
    models: &[AgentModel],
    state: &SystemState,
    disturbance: &DisturbanceProcess,
    t_end: f64,
    dt_max: f64,
    mut on_step: impl FnMut(f64, &DVector<f64>),
) -> Result<SystemState> {
    let span = t_end - state.time;
    if span < 0.0 {
        return Err(Error::Scenario(format!("cannot integrate backwards from {} to {t_end}", state.time)));
    }
    let mut out = state.clone();
    if span == 0.0 {
        return Ok(out);
    }
    let layout = Layout::states(models);
    let steps = (span / dt_max - 1e-9).ceil().max(1.0) as usize;
    let h = span / steps as f64;
    let f = |t: f64, x: &DVector<f64>| vector_field(models, &layout, &state.held, disturbance, t, x);
    for k in 0..steps {
        let t = state.time + k as f64 * h;
        let x = &out.x;
        let k1 = f(t, x);
        let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
        let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
        let k4 = f(t + h, &(x + &k3 * h));
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let t_next = if k + 1 == steps { t_end } else { state.time + (k + 1) as f64 * h };
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { time: t_next });
        }
        out.x = next;
        out.time = t_next;
        on_step(t_next, &out.x);
    }
    Ok(out)
}

/// Sampled estimate of the flow-speed bound `mu`: the supremum of the stacked
/// closed-loop speed over states in `bbox` and admissible inputs, plus the
/// summed disturbance bounds, times a 1.1 safety factor.
///
/// The stacked 2-norm splits into per-agent blocks and each block norm is
/// convex in the input, so for a given state the input supremum is attained by
/// picking, per agent, the polytope vertex with the largest block norm.
pub fn max_flow_speed(models: &[AgentModel], bbox: Option<&StateBox>, sample_count: usize, rng_seed: u64) -> Result<f64> {
    let layout = Layout::states(models);
    let bbox = StateBox::check(bbox, layout.total())?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let phi_sum: f64 = models.iter().map(|m| m.disturbance_bound).sum();
    let mut best = 0.0_f64;
    for _ in 0..sample_count {
        let x = bbox.sample(&mut rng);
        let mut sq = 0.0;
        for (i, m) in models.iter().enumerate() {
            let xi = layout.slice(&x, i);
            let f = m.dynamics.drift(&xi);
            let g = m.dynamics.actuation(&xi);
            let set = instantiate(&m.input_set, &xi)?;
            let block = set.vertices()?.vertices.iter().map(|u| (&f + &g * u).norm_squared()).fold(f.norm_squared(), f64::max);
            sq += block;
        }
        best = best.max(sq.sqrt());
    }
    Ok(1.1 * (best + phi_sum))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn si(id: usize, dim: usize, half: f64) -> AgentModel {
        AgentModel::new(id, Dynamics::SingleIntegrator { dim }, PolytopeSpec::symmetric_box(&vec![half; dim]), Role::Normal)
    }

    #[test]
    fn single_integrator_linear_flow() {
        let models = vec![si(0, 1, 2.0)];
        let mut s = SystemState::new(&models, &[DVector::zeros(1)]).unwrap();
        s.held[0] = DVector::from_element(1, 1.0);
        let out = integrate_interval(&models, &s, &DisturbanceProcess::none(&models), 1.0, 1e-3).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-9);
        assert_eq!(out.time, 1.0);
    }

    #[test]
    fn equilibrium_is_kept() {
        let models = vec![si(0, 2, 1.0)];
        let s = SystemState::new(&models, &[DVector::from_column_slice(&[0.3, -0.7])]).unwrap();
        let out = integrate_interval(&models, &s, &DisturbanceProcess::none(&models), 3.7, 1e-2).unwrap();
        assert_eq!(out.x, s.x);
    }

    #[test]
    fn damped_double_integrator_closed_form() {
        let beta: f64 = 3.0;
        let models = vec![AgentModel::new(
            0,
            Dynamics::DoubleIntegrator { dim: 1, damping: beta },
            PolytopeSpec::symmetric_box(&[2.0]),
            Role::Normal,
        )];
        let mut s = SystemState::new(&models, &[DVector::zeros(2)]).unwrap();
        s.held[0] = DVector::from_element(1, 1.0);
        let out = integrate_interval(&models, &s, &DisturbanceProcess::none(&models), 2.0, 1e-3).unwrap();
        let t: f64 = 2.0;
        let v = (1.0 - (-beta * t).exp()) / beta;
        let p = t / beta - (1.0 - (-beta * t).exp()) / (beta * beta);
        assert!((out.x[1] - v).abs() < 1e-9, "v = {} vs {v}", out.x[1]);
        assert!((out.x[0] - p).abs() < 1e-9);
    }

    #[test]
    fn unicycle_output_moves_with_input() {
        let b = 0.5;
        let dynamics = Dynamics::Unicycle { b_offset: b };
        for theta in [0.0, 0.4, 2.0, -1.3] {
            let x = DVector::from_column_slice(&[0.1, -0.2, theta]);
            let jg = dynamics.position_jacobian(&x) * dynamics.actuation(&x);
            assert!((jg - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
        }
    }

    #[test]
    fn disturbance_respects_bound() {
        let models = vec![si(0, 3, 1.0).with_disturbance(1.73), si(1, 6, 1.0).with_disturbance(0.4899)];
        for kind in [DisturbanceKind::default(), DisturbanceKind::Sinusoidal { frequencies: vec![0.3, 1.7, 5.0] }] {
            let d = DisturbanceProcess::new(kind, 42, &models);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..10_000 {
                let t = rng.random_range(0.0..100.0);
                for i in 0..2 {
                    assert!(d.value(i, t).norm() <= d.bound(i) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn disturbance_is_deterministic_and_independent() {
        let models = vec![si(0, 2, 1.0).with_disturbance(1.0), si(1, 2, 1.0).with_disturbance(1.0)];
        let d1 = DisturbanceProcess::new(DisturbanceKind::default(), 5, &models);
        let d2 = DisturbanceProcess::new(DisturbanceKind::default(), 5, &models);
        assert_eq!(d1.value(0, 1.234), d2.value(0, 1.234));
        assert_ne!(d1.value(0, 1.234), d1.value(1, 1.234));
        assert_eq!(d1.value(0, 1.201), d1.value(0, 1.249));
    }

    #[test]
    fn flow_speed_examples() {
        let bbox = StateBox { lo: vec![-1.0], hi: vec![1.0] };
        let zero = vec![AgentModel::new(
            0,
            Dynamics::Custom(CustomDynamics(Arc::new(Zero))),
            PolytopeSpec::symmetric_box(&[1.0]),
            Role::Normal,
        )];
        assert_eq!(max_flow_speed(&zero, Some(&bbox), 50, 1).unwrap(), 0.0);

        let one = vec![si(0, 1, 2.0).with_disturbance(0.5)];
        assert!((max_flow_speed(&one, Some(&bbox), 50, 1).unwrap() - 2.75).abs() < 1e-12);

        let two = vec![si(0, 1, 1.0), si(1, 1, 1.0)];
        let bbox2 = StateBox { lo: vec![-1.0; 2], hi: vec![1.0; 2] };
        assert!((max_flow_speed(&two, Some(&bbox2), 50, 1).unwrap() - 1.1 * 2f64.sqrt()).abs() < 1e-12);

        assert_eq!(max_flow_speed(&two, None, 50, 1).unwrap_err(), Error::EmptyBoundingBox);
    }

    struct Zero;
    impl ControlAffine for Zero {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn drift(&self, _x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(1)
        }
        fn actuation(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
    }
}
