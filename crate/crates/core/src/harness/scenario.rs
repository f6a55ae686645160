//! Scenario description: everything a run needs besides the seed.
//!
//! Units are SI throughout: positions in meters, times in seconds, speeds in
//! meters per second, disturbance bounds in state units per second.

use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{build_cascade, AlphaFunction, BarrierAtom, ComposedBarrier, PsiCascade, SafeSetFunction};
use crate::controllers::{ControllerKind, NominalPolicy};
use crate::dynamics::{max_flow_speed, AgentModel, DisturbanceKind, Dynamics, Layout, Role, StateBox};
use crate::error::{Error, Result};
use crate::margins::{estimate_constants, MarginConfig, MarginReport, Provenance};
use crate::polytope::{instantiate, PolytopeSpec};
use crate::scheduler::{AgentSampling, SampleSchedule};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentSpec {
    pub dynamics: Dynamics,
    pub input_set: PolytopeSpec,
    pub role: Role,
    #[serde(default)]
    pub disturbance_bound: f64,
    pub initial_state: Vec<f64>,
    pub controller: ControllerKind,
    #[serde(default = "zero_policy")]
    pub nominal: NominalPolicy,
    pub sampling: AgentSampling,
}

fn zero_policy() -> NominalPolicy {
    NominalPolicy::Zero
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// How the composed barrier is assembled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    /// Log-sum-exp sharpness.
    pub rho: f64,
    /// Required center distance between two agents (m). Obstacle atoms use
    /// the obstacle radius plus half of it.
    pub pair_radius: f64,
    /// Generate pair and obstacle atoms for the team.
    #[serde(default = "yes")]
    pub collisions: bool,
    /// Extra atoms appended after the generated ones.
    #[serde(default)]
    pub atoms: Vec<BarrierAtom>,
    /// Controllers only see atoms within this distance of themselves.
    #[serde(default)]
    pub neighbor_radius: Option<f64>,
}

fn yes() -> bool {
    true
}

/// Margin inputs; unset constants are estimated by sampling the bounding box.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default = "unit")]
    pub l_prime: f64,
    #[serde(default)]
    pub c_f: Option<f64>,
    #[serde(default)]
    pub c_g: Option<f64>,
    #[serde(default)]
    pub c_alpha: Option<f64>,
    #[serde(default)]
    pub c_gamma: Option<f64>,
    #[serde(default)]
    pub c_h: Option<f64>,
    #[serde(default)]
    pub u_max: Option<f64>,
    /// Fixed value of `eta` (or `eta'` for cascades).
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default = "default_samples")]
    pub sample_count: usize,
    #[serde(default)]
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

fn default_samples() -> usize {
    10_000
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    /// Apply the tracking law with the sign exactly as printed.
    #[serde(default)]
    pub literal_paper_sign: bool,
    /// Force `eta = 0` for every normal agent.
    #[serde(default)]
    pub eta_zero_ablation: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub agents: Vec<AgentSpec>,
    pub barrier: BarrierSpec,
    /// `alpha_1 .. alpha_q`; the length is the cascade order.
    pub alphas: Vec<AlphaFunction>,
    /// Team barrier used by adversaries with a filtered nominal controller.
    #[serde(default)]
    pub adversary_barrier: Option<BarrierSpec>,
    #[serde(default)]
    pub adversary_alphas: Vec<AlphaFunction>,
    #[serde(default)]
    pub margins: MarginSpec,
    /// Simulated duration (s).
    pub horizon: f64,
    /// Largest integration step (s).
    #[serde(default = "default_dt")]
    pub dt_max: f64,
    #[serde(default)]
    pub disturbance: DisturbanceKind,
    /// Stacked-state box covering the safe set, for sampled estimates.
    #[serde(default)]
    pub bounding_box: Option<StateBox>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub flags: Flags,
    /// Record every n-th integration step.
    #[serde(default = "one")]
    pub record_stride: usize,
}

fn default_dt() -> f64 {
    1e-3
}

fn one() -> usize {
    1
}

/// Derives an independent seed for one purpose from a run seed.
pub(crate) fn sub_seed(seed: u64, purpose: u64) -> u64 {
    let mut z = seed.wrapping_add(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn team_barrier(models: &[AgentModel], role: Role, spec: &BarrierSpec, obstacles: &[Obstacle]) -> Result<ComposedBarrier> {
    let mut atoms = Vec::new();
    if spec.collisions {
        let in_team = |k: usize| models[k].role == role;
        for i in 0..models.len() {
            for j in i + 1..models.len() {
                // normal agents guard every pair they are in; adversaries only each other
                let keep = match role {
                    Role::Normal => in_team(i) || in_team(j),
                    Role::Adversarial => in_team(i) && in_team(j),
                };
                if keep {
                    atoms.push(BarrierAtom::PairCollision { i, j, radius: spec.pair_radius });
                }
            }
        }
        for (i, m) in models.iter().enumerate() {
            if m.role == role {
                for o in obstacles {
                    atoms.push(BarrierAtom::AgentObstacle {
                        i,
                        center: o.center.clone(),
                        radius: o.radius + spec.pair_radius / 2.0,
                    });
                }
            }
        }
    }
    atoms.extend(spec.atoms.iter().cloned());
    ComposedBarrier::new(atoms, spec.rho)
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn order(&self) -> usize {
        self.alphas.len()
    }

    pub fn models(&self) -> Vec<AgentModel> {
        self.agents
            .iter()
            .enumerate()
            .map(|(id, a)| AgentModel {
                id,
                dynamics: a.dynamics.clone(),
                disturbance_bound: a.disturbance_bound,
                input_set: a.input_set.clone(),
                role: a.role,
            })
            .collect()
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.agents.iter().map(|a| a.initial_state.len()).sum(),
            self.agents.iter().flat_map(|a| a.initial_state.iter().copied()),
        )
    }

    /// Barrier protecting the normal agents.
    pub fn barrier(&self) -> Result<ComposedBarrier> {
        team_barrier(&self.models(), Role::Normal, &self.barrier, &self.obstacles)
    }

    pub fn adversary_barrier(&self) -> Result<Option<ComposedBarrier>> {
        self.adversary_barrier
            .as_ref()
            .map(|spec| team_barrier(&self.models(), Role::Adversarial, spec, &self.obstacles))
            .transpose()
    }

    /// Probe states for the relative-degree check: the initial state plus
    /// a few box samples.
    fn probes(&self) -> Vec<DVector<f64>> {
        let mut probes = vec![self.initial_state()];
        if let Some(b) = &self.bounding_box {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            probes.extend((0..8).map(|_| b.sample(&mut rng)));
        }
        probes
    }

    pub fn cascade(&self, xi: f64) -> Result<PsiCascade> {
        build_cascade(self.barrier()?, self.alphas.clone(), xi, &self.models(), &self.probes())
    }

    pub fn adversary_cascade(&self) -> Result<Option<PsiCascade>> {
        let Some(barrier) = self.adversary_barrier()? else {
            return Ok(None);
        };
        let alphas = if self.adversary_alphas.is_empty() { self.alphas.clone() } else { self.adversary_alphas.clone() };
        Ok(Some(build_cascade(barrier, alphas, 0.0, &self.models(), &self.probes())?))
    }

    /// Agent `agent`'s nominal policy with the scenario flags applied.
    pub fn nominal_policy(&self, agent: usize) -> NominalPolicy {
        let mut policy = self.agents[agent].nominal.clone();
        if let NominalPolicy::FormationBezier { literal_paper_sign, .. } = &mut policy {
            *literal_paper_sign |= self.flags.literal_paper_sign;
        }
        policy
    }

    pub fn schedule(&self, seed: u64) -> SampleSchedule {
        SampleSchedule { agents: self.agents.iter().map(|a| a.sampling).collect(), rng_seed: sub_seed(seed, 1) }
    }

    pub fn disturbance_seed(&self, seed: u64) -> u64 {
        sub_seed(seed, 2)
    }

    /// `Gamma_i + delta_i^max` per agent.
    pub fn intervals(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.sampling.period + a.sampling.jitter).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let models = self.models();
        if models.is_empty() {
            return Err(Error::Scenario("no agents".into()));
        }
        if self.alphas.is_empty() {
            return Err(Error::Scenario("at least one alpha function required".into()));
        }
        if !(self.horizon > 0.0) || !(self.dt_max > 0.0) || self.record_stride == 0 {
            return Err(Error::Scenario("horizon, dt_max and record_stride must be positive".into()));
        }
        for (m, a) in models.iter().zip(&self.agents) {
            m.validate()?;
            if a.initial_state.len() != m.state_dim() {
                return Err(Error::Dimension(format!("agent {} initial state has length {}", m.id, a.initial_state.len())));
            }
            let ok = match a.controller {
                ControllerKind::AdversarialMax => m.role == Role::Adversarial,
                ControllerKind::NominalFiltered => m.role == Role::Normal || self.adversary_barrier.is_some(),
                ControllerKind::NominalOnly => true,
                _ => m.role == Role::Normal,
            };
            if !ok {
                return Err(Error::Scenario(format!("agent {} cannot use controller {:?}", m.id, a.controller)));
            }
        }
        self.schedule(0).validate()?;
        let central: Vec<&AgentSpec> = self.agents.iter().filter(|a| a.controller == ControllerKind::NormalCentralized).collect();
        if !central.is_empty() {
            let normals: Vec<&AgentSpec> = self.agents.iter().filter(|a| a.role == Role::Normal).collect();
            let first = normals[0].sampling;
            if central.len() != normals.len() || normals.iter().any(|a| a.sampling != first || a.sampling.jitter != 0.0) {
                return Err(Error::Scenario("centralized filtering needs every normal agent on one synchronous schedule".into()));
            }
        }
        let x0 = self.initial_state();
        let h0 = self.barrier()?.eval_h(&models, &x0);
        if h0 > 0.0 {
            return Err(Error::Scenario(format!("initial state is outside the safe set (h_tot = {h0})")));
        }
        Ok(())
    }

    /// Resolves every margin constant, estimating those left unset. Estimation
    /// is skipped when the fixed `eta` (and `xi`, for cascades) make it moot.
    pub fn resolve_margins(&self) -> Result<MarginConfig> {
        let spec = &self.margins;
        let models = self.models();
        let mut cfg = MarginConfig {
            l_prime: spec.l_prime,
            disturbance_sum: models.iter().map(|m| m.disturbance_bound).sum(),
            override_eta: if self.flags.eta_zero_ablation { Some(0.0) } else { spec.eta },
            override_xi: spec.xi,
            ..Default::default()
        };
        let user = [
            ("mu", spec.mu),
            ("c_f", spec.c_f),
            ("c_g", spec.c_g),
            ("c_alpha", spec.c_alpha),
            ("c_gamma", spec.c_gamma),
            ("c_h", spec.c_h),
            ("u_max", spec.u_max),
        ];
        let needs_xi = self.order() > 1 && cfg.override_xi.is_none();
        let all_given = user.iter().all(|(_, v)| v.is_some());
        let estimate = !all_given && (cfg.override_eta.is_none() || needs_xi);
        let mut estimated = Default::default();
        let mut mu_est = 0.0;
        if estimate {
            let bbox = self.bounding_box.as_ref();
            mu_est = max_flow_speed(&models, bbox, spec.sample_count.min(2000), spec.seed)?;
            // cascades enforce the last level; its constants feed eta'
            let cascade = self.cascade(spec.xi.unwrap_or(0.0))?;
            let top = cascade.top();
            let f: &dyn SafeSetFunction = &top;
            estimated = estimate_constants(&models, f, &cascade.top_alpha(), bbox, spec.sample_count, spec.seed)?;
            if needs_xi && spec.c_h.is_none() {
                let c0 = estimate_constants(&models, &cascade.barrier, &self.alphas[0], bbox, spec.sample_count, spec.seed)?;
                cfg.override_xi = Some(c0.c_h * cfg.disturbance_sum);
                cfg.provenance.insert("xi".into(), Provenance::SampledEstimate);
            }
        }
        let pick = |cfg: &mut MarginConfig, name: &str, user: Option<f64>, est: f64| -> f64 {
            let p = match (user, estimate) {
                (Some(_), _) => Provenance::UserSupplied,
                (None, true) => Provenance::SampledEstimate,
                (None, false) => Provenance::Default,
            };
            cfg.provenance.insert(name.to_string(), p);
            user.unwrap_or(if estimate { est } else { 0.0 })
        };
        cfg.mu = pick(&mut cfg, "mu", spec.mu, mu_est);
        cfg.c_f = pick(&mut cfg, "c_f", spec.c_f, estimated.c_f);
        cfg.c_g = pick(&mut cfg, "c_g", spec.c_g, estimated.c_g);
        cfg.c_alpha = pick(&mut cfg, "c_alpha", spec.c_alpha, estimated.c_alpha);
        cfg.c_gamma = pick(&mut cfg, "c_gamma", spec.c_gamma, estimated.c_gamma);
        cfg.c_h = pick(&mut cfg, "c_h", spec.c_h, estimated.c_h);
        cfg.u_max = pick(&mut cfg, "u_max", spec.u_max, estimated.u_max);
        if cfg.override_eta.is_some() {
            let p = if self.flags.eta_zero_ablation { Provenance::Default } else { Provenance::UserSupplied };
            cfg.provenance.insert("eta".into(), p);
        }
        if spec.xi.is_some() {
            cfg.provenance.insert("xi".into(), Provenance::UserSupplied);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn margin_report(&self, cfg: &MarginConfig) -> MarginReport {
        MarginReport::new(cfg, &self.intervals(), self.order() > 1)
    }

    /// Checks that every initial held input (zero) and polytope is usable.
    pub fn check_polytopes(&self) -> Result<()> {
        let models = self.models();
        let layout = Layout::states(&models);
        let x0 = self.initial_state();
        for (i, m) in models.iter().enumerate() {
            instantiate(&m.input_set, &layout.slice(&x0, i))?;
        }
        Ok(())
    }
}
