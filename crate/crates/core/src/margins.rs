//! Robustness margins for zero-order-hold sampling and disturbances.
//!
//! `epsilon` bounds how far the state drifts from its last sample, `eta`
//! converts that drift plus the disturbance into a tightening of the sampled
//! barrier condition, and `xi` is the disturbance bound folded into the first
//! level of a high-order cascade.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{AlphaFunction, SafeSetFunction};
use crate::dynamics::{AgentModel, Layout, StateBox};
use crate::error::{Error, Result};
use crate::polytope::instantiate;
use crate::solvers::{gamma_value, Extremum};

/// Multiplier applied to every sampled Lipschitz estimate.
pub const SAFETY_FACTOR: f64 = 1.2;
/// Largest stacked dimension accepted by the grid-sampled boundary check.
pub const MAX_GRID_DIM: usize = 6;

/// `(mu / L') (exp(L' gamma) - 1)`.
pub fn epsilon(gamma_interval: f64, mu: f64, l_prime: f64) -> f64 {
    mu / l_prime * (l_prime * gamma_interval).exp_m1()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    UserSupplied,
    SampledEstimate,
    Default,
}

/// Constants entering `eta`, `eta'` and `xi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    pub mu: f64,
    pub l_prime: f64,
    pub c_f: f64,
    pub c_g: f64,
    pub c_alpha: f64,
    pub c_gamma: f64,
    pub c_h: f64,
    pub u_max: f64,
    /// `sum_l phi_l^max` over all agents.
    pub disturbance_sum: f64,
    #[serde(default)]
    pub override_eta: Option<f64>,
    #[serde(default)]
    pub override_xi: Option<f64>,
    #[serde(default)]
    pub provenance: BTreeMap<String, Provenance>,
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self {
            mu: 0.0,
            l_prime: 1.0,
            c_f: 0.0,
            c_g: 0.0,
            c_alpha: 0.0,
            c_gamma: 0.0,
            c_h: 0.0,
            u_max: 0.0,
            disturbance_sum: 0.0,
            override_eta: None,
            override_xi: None,
            provenance: BTreeMap::new(),
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.mu, self.c_f, self.c_g, self.c_alpha, self.c_gamma, self.c_h, self.u_max, self.disturbance_sum];
        if !(self.l_prime > 0.0) || nonneg.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::Scenario("margin constants must be nonnegative and l_prime positive".into()));
        }
        Ok(())
    }

    pub fn with_constants(mut self, c: &LipschitzConstants) -> Self {
        self.c_f = c.c_f;
        self.c_g = c.c_g;
        self.c_alpha = c.c_alpha;
        self.c_gamma = c.c_gamma;
        self.c_h = c.c_h;
        self.u_max = c.u_max;
        self
    }

    pub fn epsilon(&self, interval: f64) -> f64 {
        epsilon(interval, self.mu, self.l_prime)
    }

    fn drift_factor(&self) -> f64 {
        self.c_f + self.c_g * self.u_max + self.c_alpha + self.c_gamma
    }
}

/// `(c_f + c_g u_max + c_alpha + c_gamma) epsilon + c_h sum phi`, unless overridden.
pub fn eta(margin: &MarginConfig, interval: f64) -> f64 {
    margin.override_eta.unwrap_or_else(|| margin.drift_factor() * margin.epsilon(interval) + margin.c_h * margin.disturbance_sum)
}

/// `eta` without the disturbance term, for the last level of a cascade whose
/// first level already carries `xi`.
pub fn eta_prime(margin: &MarginConfig, interval: f64) -> f64 {
    margin.override_eta.unwrap_or_else(|| margin.drift_factor() * margin.epsilon(interval))
}

/// `c_h sum phi`, unless overridden.
pub fn xi(margin: &MarginConfig) -> f64 {
    margin.override_xi.unwrap_or(margin.c_h * margin.disturbance_sum)
}

/// Sampled Lipschitz constants of the terms in the sampled barrier condition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    pub c_f: f64,
    pub c_g: f64,
    pub c_alpha: f64,
    pub c_gamma: f64,
    pub c_h: f64,
    pub u_max: f64,
}

struct Probe {
    lf: f64,
    lg: Vec<DVector<f64>>,
    alpha_h: f64,
    gamma: f64,
}

fn probe(models: &[AgentModel], barrier: &dyn SafeSetFunction, alpha: &AlphaFunction, x: &DVector<f64>) -> Result<(Probe, f64)> {
    let layout = Layout::states(models);
    let grad = barrier.gradient(models, x)?;
    let lie = crate::barrier::lie_from_gradient(models, x, &grad);
    let mut p = Probe { lf: 0.0, lg: Vec::new(), alpha_h: alpha.eval(barrier.value(models, x)?), gamma: 0.0 };
    let mut grad_max = 0.0_f64;
    for (i, m) in models.iter().enumerate() {
        grad_max = grad_max.max(layout.slice(&grad, i).norm());
        if m.is_normal() {
            p.lf += lie[i].lf;
            p.lg.push(lie[i].lg.clone());
        } else {
            let set = instantiate(&m.input_set, &layout.slice(x, i))?;
            p.gamma += gamma_value(&lie[i], &set, Extremum::Max)?;
        }
    }
    Ok((p, grad_max))
}

/// Estimates the Lipschitz constants by difference quotients over a seeded
/// stream of state pairs in `bbox`. Half the pairs are close together (to
/// catch local slopes), half are independent. Each estimate is the running
/// maximum times [`SAFETY_FACTOR`], so it never decreases with more samples.
///
/// `c_f`, `c_g` sum over normal agents, `c_gamma` over adversaries, and
/// `c_h` is the largest per-agent gradient block norm.
pub fn estimate_constants(
    models: &[AgentModel],
    barrier: &dyn SafeSetFunction,
    alpha: &AlphaFunction,
    bbox: Option<&StateBox>,
    sample_count: usize,
    rng_seed: u64,
) -> Result<LipschitzConstants> {
    let layout = Layout::states(models);
    let bbox = StateBox::check(bbox, layout.total())?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let scale = 1e-3 * bbox.diagonal().max(1e-12);
    let mut out = LipschitzConstants::default();
    for k in 0..sample_count {
        let x1 = bbox.sample(&mut rng);
        let x2 = if k % 2 == 0 {
            let dir = DVector::from_fn(x1.len(), |_, _| rng.random_range(-1.0..1.0));
            &x1 + dir * scale
        } else {
            bbox.sample(&mut rng)
        };
        let gap = (&x1 - &x2).norm();
        let (p1, g1) = probe(models, barrier, alpha, &x1)?;
        let (p2, g2) = probe(models, barrier, alpha, &x2)?;
        out.c_h = out.c_h.max(g1.max(g2));
        if gap == 0.0 {
            continue;
        }
        let dg: f64 = p1.lg.iter().zip(&p2.lg).map(|(a, b)| (a - b).norm()).sum();
        out.c_f = out.c_f.max((p1.lf - p2.lf).abs() / gap);
        out.c_g = out.c_g.max(dg / gap);
        out.c_alpha = out.c_alpha.max((p1.alpha_h - p2.alpha_h).abs() / gap);
        out.c_gamma = out.c_gamma.max((p1.gamma - p2.gamma).abs() / gap);
        for (i, m) in models.iter().enumerate().filter(|(_, m)| m.is_normal()) {
            let set = instantiate(&m.input_set, &layout.slice(&x1, i))?;
            for v in &set.vertices()?.vertices {
                out.u_max = out.u_max.max(v.norm());
            }
        }
    }
    out.c_f *= SAFETY_FACTOR;
    out.c_g *= SAFETY_FACTOR;
    out.c_alpha *= SAFETY_FACTOR;
    out.c_gamma *= SAFETY_FACTOR;
    out.c_h *= SAFETY_FACTOR;
    Ok(out)
}

/// Margin quantities for a given schedule, ready to serialize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub config: MarginConfig,
    /// `epsilon(Gamma_i + delta_i^max)` per agent.
    pub epsilon: Vec<f64>,
    /// `eta(Gamma_i + delta_i^max)` per agent.
    pub eta: Vec<f64>,
    /// `eta'(Gamma_i + delta_i^max)` per agent, present for cascades.
    pub eta_prime: Option<Vec<f64>>,
    pub xi: f64,
}

impl MarginReport {
    /// `intervals` holds `Gamma_i + delta_i^max` per agent.
    pub fn new(config: &MarginConfig, intervals: &[f64], cascade: bool) -> Self {
        Self {
            config: config.clone(),
            epsilon: intervals.iter().map(|&s| config.epsilon(s)).collect(),
            eta: intervals.iter().map(|&s| eta(config, s)).collect(),
            eta_prime: cascade.then(|| intervals.iter().map(|&s| eta_prime(config, s)).collect()),
            xi: xi(config),
        }
    }
}

/// Parameters of the sampled boundary-region check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Config {
    /// Grid points per state axis.
    pub grid_resolution: usize,
    /// Sampled points per ball `B(x, eps*)`, in addition to its center.
    pub ball_samples: usize,
    /// Largest nominal sampling period.
    pub gamma_max: f64,
    pub delta_max: f64,
    pub seed: u64,
}

impl Default for Theorem3Config {
    fn default() -> Self {
        Self { grid_resolution: 41, ball_samples: 16, gamma_max: 0.01, delta_max: 0.0, seed: 0 }
    }
}

/// Outcome of the sampled (non-certified) sufficient-condition check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Report {
    pub holds: bool,
    pub worst_margin: f64,
    pub witness_state: Vec<f64>,
    pub epsilon_star: f64,
    pub eta: f64,
    pub band_points: usize,
    pub note: String,
}

/// Samples the inner boundary band `dS_{2 eps*}` on a grid over `bbox` and
/// evaluates the best-effort condition
/// `sum_i max_{B(x, eps*)} gamma_i^min + sum_j gamma_j^max + alpha(h) + eta`
/// at each band point, with `eps* = epsilon(Gamma^max + 2 delta^max)`.
/// Distance to the boundary is approximated by `|h| / |grad h|`.
pub fn check_theorem3_condition(
    models: &[AgentModel],
    barrier: &dyn SafeSetFunction,
    alpha: &AlphaFunction,
    margin: &MarginConfig,
    bbox: Option<&StateBox>,
    config: &Theorem3Config,
) -> Result<Theorem3Report> {
    let layout = Layout::states(models);
    let n = layout.total();
    if n > MAX_GRID_DIM {
        return Err(Error::DimensionTooLarge(n));
    }
    let bbox = StateBox::check(bbox, n)?;
    let interval = config.gamma_max + 2.0 * config.delta_max;
    let eps = margin.epsilon(interval);
    let eta_star = eta(margin, interval);
    let res = config.grid_resolution.max(2);
    let steps: Vec<f64> = (0..n).map(|k| (bbox.hi[k] - bbox.lo[k]) / (res - 1) as f64).collect();
    let grid_step = steps.iter().map(|s| s * s).sum::<f64>().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let gamma_min_at = |i: usize, x: &DVector<f64>| -> Result<f64> {
        let lie = barrier.lie_terms(models, x)?;
        let set = instantiate(&models[i].input_set, &layout.slice(x, i))?;
        gamma_value(&lie[i], &set, Extremum::Min)
    };

    let mut worst = f64::NEG_INFINITY;
    let mut witness = Vec::new();
    let mut band_points = 0;
    let total = res.pow(n as u32);
    for idx in 0..total {
        let mut rem = idx;
        let x = DVector::from_fn(n, |k, _| {
            let c = rem % res;
            rem /= res;
            bbox.lo[k] + c as f64 * steps[k]
        });
        let h = barrier.value(models, &x)?;
        if h > 0.0 {
            continue;
        }
        let grad = match barrier.gradient(models, &x) {
            Ok(g) => g,
            Err(Error::GradientSingularity(..)) => continue,
            Err(e) => return Err(e),
        };
        let gnorm = grad.norm();
        if gnorm == 0.0 || h.abs() / gnorm > 2.0 * eps + grid_step {
            continue;
        }
        band_points += 1;
        let ball: Vec<DVector<f64>> = std::iter::once(x.clone())
            .chain((0..config.ball_samples).map(|_| {
                let dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let r = rng.random_range(0.0..=1.0_f64).powf(1.0 / n as f64) * eps;
                let norm = dir.norm();
                if norm == 0.0 {
                    x.clone()
                } else {
                    &x + dir * (r / norm)
                }
            }))
            .collect();
        let lie = crate::barrier::lie_from_gradient(models, &x, &grad);
        let mut value = alpha.eval(h) + eta_star;
        for (i, m) in models.iter().enumerate() {
            if m.is_normal() {
                let mut best = f64::NEG_INFINITY;
                for xb in &ball {
                    match gamma_min_at(i, xb) {
                        Ok(g) => best = best.max(g),
                        Err(Error::GradientSingularity(..)) => {}
                        Err(e) => return Err(e),
                    }
                }
                value += best;
            } else {
                let set = instantiate(&m.input_set, &layout.slice(&x, i))?;
                value += gamma_value(&lie[i], &set, Extremum::Max)?;
            }
        }
        if value > worst {
            worst = value;
            witness = x.iter().copied().collect();
        }
    }
    Ok(Theorem3Report {
        holds: band_points > 0 && worst <= 0.0,
        worst_margin: worst,
        witness_state: witness,
        epsilon_star: eps,
        eta: eta_star,
        band_points,
        note: "sampled sufficient-condition check, not a certificate".into(),
    })
}
