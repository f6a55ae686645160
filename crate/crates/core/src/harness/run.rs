//! The closed-loop event loop.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::trace::{EventKind, SampleStatus, Trace, TraceRow, TraceSummary};
use crate::barrier::{ComposedBarrier, PsiCascade};
use crate::controllers::{
    adversarial_input, centralized_filter, high_order_filter, nominal_input, BroadcastTable, ControllerKind, FilterOutcome,
};
use crate::dynamics::{integrate_with, AgentModel, DisturbanceProcess, Layout, Role, SystemState};
use crate::error::{Error, Result};
use crate::margins::{MarginConfig, MarginReport};
use crate::scheduler::{generate_schedule, step_event, EventQueue, SampledSystem};

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Trace,
    pub margins: MarginReport,
    /// The error that stopped the run early, if any.
    pub error: Option<Error>,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub max_h_tot: f64,
    pub first_violation: Option<f64>,
    pub fallback_count: usize,
    pub summary: TraceSummary,
    pub margins: MarginReport,
    pub error: Option<String>,
}

impl RunOutput {
    pub fn report(&self, scenario: &Scenario, seed: u64) -> RunReport {
        let s = &self.trace.summary;
        RunReport {
            scenario: scenario.name.clone(),
            seed,
            max_h_tot: s.max_h_tot,
            first_violation: s.first_violation,
            fallback_count: s.fallback_count,
            summary: s.clone(),
            margins: self.margins.clone(),
            error: self.error.as_ref().map(|e| e.to_string()),
        }
    }

    /// Writes `trace.csv`, `report.json` and a copy of the scenario to `dir`.
    pub fn write(&self, scenario: &Scenario, seed: u64, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.trace.write_csv(&dir.join("trace.csv"))?;
        let report = serde_json::to_string_pretty(&self.report(scenario, seed))?;
        std::fs::write(dir.join("report.json"), report + "\n")?;
        std::fs::write(dir.join("scenario.json"), scenario.to_json()? + "\n")?;
        Ok(())
    }
}

struct World<'a> {
    scenario: &'a Scenario,
    models: Vec<AgentModel>,
    state: SystemState,
    disturbance: DisturbanceProcess,
    /// Cascade over the normal team's barrier (order 1 means plain `h`).
    cascade: PsiCascade,
    adversary_cascade: Option<PsiCascade>,
    margin: Vec<f64>,
    tables: [BroadcastTable; 2],
    central: Option<(f64, FilterOutcome)>,
    trace: Trace,
    steps: usize,
}

fn team_index(role: Role) -> usize {
    match role {
        Role::Normal => 0,
        Role::Adversarial => 1,
    }
}

impl World<'_> {
    fn record(&mut self, kind: EventKind, agent: Option<usize>, status: Option<SampleStatus>, slack: Option<f64>) -> Result<()> {
        let x = &self.state.x;
        let h_tot = self.cascade.barrier.eval_h(&self.models, x);
        let psi = if self.cascade.order() == 1 { vec![h_tot] } else { self.cascade.psi_levels(&self.models, x)? };
        let u = self.state.held.iter().flat_map(|u| u.iter().copied()).collect();
        self.trace.push(TraceRow {
            t: self.state.time,
            agent,
            kind,
            status,
            h_tot,
            psi,
            u,
            x: x.iter().copied().collect(),
            slack,
        });
        Ok(())
    }

    fn local(&self, barrier: &ComposedBarrier, agent: usize, radius: Option<f64>) -> ComposedBarrier {
        match radius {
            Some(r) => barrier.local_to(&self.models, &self.state.x, agent, r),
            None => barrier.clone(),
        }
    }

    fn control(&mut self, agent: usize) -> Result<(DVector<f64>, SampleStatus, Option<f64>)> {
        let spec = &self.scenario.agents[agent];
        let x = &self.state.x;
        let t = self.state.time;
        let models = &self.models;
        let role = models[agent].role;
        let adversarial = role == Role::Adversarial;
        let table = &self.tables[team_index(role)];
        let filtered = |outcome: FilterOutcome, k: usize| {
            let status = if adversarial { SampleStatus::Adversarial } else { outcome.status.into() };
            let slack = outcome.row.as_ref().map(|_| outcome.row_slack);
            (outcome.u[k].clone(), status, slack)
        };
        match spec.controller {
            ControllerKind::NormalCentralized => {
                if self.central.as_ref().is_none_or(|(time, _)| *time != t) {
                    let normals: Vec<usize> = (0..models.len()).filter(|&i| models[i].is_normal()).collect();
                    let nominal = normals
                        .iter()
                        .map(|&i| nominal_input(&self.scenario.nominal_policy(i), models, x, i, t))
                        .collect::<Result<Vec<_>>>()?;
                    let margin = normals.iter().map(|&i| self.margin[i]).fold(0.0, f64::max);
                    let alpha = self.cascade.alphas[0];
                    let outcome = centralized_filter(models, x, &self.cascade.barrier, &alpha, margin, &nominal)?;
                    self.central = Some((t, outcome));
                }
                let (_, outcome) = self.central.as_ref().expect("cached above");
                let k = models[..agent].iter().filter(|m| m.is_normal()).count();
                Ok(filtered(outcome.clone(), k))
            }
            ControllerKind::NormalDistributed | ControllerKind::NormalHighOrder => {
                let nominal = nominal_input(&self.scenario.nominal_policy(agent), models, x, agent, t)?;
                let local = self.local(&self.cascade.barrier, agent, self.scenario.barrier.neighbor_radius);
                let cascade = self.cascade.with_barrier(local);
                let outcome = high_order_filter(agent, models, x, table, &cascade, self.margin[agent], &nominal)?;
                Ok(filtered(outcome, 0))
            }
            ControllerKind::AdversarialMax => {
                let own = self.cascade.with_barrier(self.cascade.barrier.involving(agent));
                let u = adversarial_input(models, agent, &own.top(), x)?;
                Ok((u, SampleStatus::Adversarial, None))
            }
            ControllerKind::NominalOnly => {
                let nominal = nominal_input(&self.scenario.nominal_policy(agent), models, x, agent, t)?;
                let empty = self.cascade.with_barrier(ComposedBarrier { atoms: Vec::new(), rho: 1.0 });
                let outcome = high_order_filter(agent, models, x, table, &empty, 0.0, &nominal)?;
                let status = if adversarial { SampleStatus::Adversarial } else { SampleStatus::Nominal };
                Ok((outcome.u[0].clone(), status, None))
            }
            ControllerKind::NominalFiltered => {
                let nominal = nominal_input(&self.scenario.nominal_policy(agent), models, x, agent, t)?;
                let (cascade, radius, margin) = match (role, &self.adversary_cascade) {
                    (Role::Adversarial, Some(c)) => {
                        (c, self.scenario.adversary_barrier.as_ref().and_then(|b| b.neighbor_radius), 0.0)
                    }
                    _ => (&self.cascade, self.scenario.barrier.neighbor_radius, self.margin[agent]),
                };
                let local = self.local(&cascade.barrier, agent, radius);
                let outcome = high_order_filter(agent, models, x, table, &cascade.with_barrier(local), margin, &nominal)?;
                Ok(filtered(outcome, 0))
            }
        }
    }
}

impl SampledSystem for World<'_> {
    fn advance_to(&mut self, time: f64) -> Result<()> {
        let stride = self.scenario.record_stride;
        let mut pending = Vec::new();
        let mut steps = self.steps;
        let (models, barrier, trace) = (&self.models, &self.cascade.barrier, &mut self.trace);
        let next = integrate_with(models, &self.state, &self.disturbance, time, self.scenario.dt_max, |t, x| {
            trace.observe_step(t, barrier.eval_h(models, x));
            steps += 1;
            if steps.is_multiple_of(stride) {
                pending.push((t, x.clone()));
            }
        })?;
        self.steps = steps;
        let held = next.held.clone();
        for (t, x) in pending {
            self.state = SystemState { time: t, x, held: held.clone() };
            self.record(EventKind::Step, None, None, None)?;
        }
        self.state = next;
        Ok(())
    }

    fn sample(&mut self, agent: usize) -> Result<()> {
        match self.control(agent) {
            Ok((u, status, slack)) => {
                let role = self.models[agent].role;
                self.tables[team_index(role)].broadcast(agent, &u, self.state.time);
                self.state.held[agent] = u;
                self.record(EventKind::Sample, Some(agent), Some(status), slack)
            }
            Err(e) => {
                self.record(EventKind::Sample, Some(agent), Some(SampleStatus::Error), None)?;
                Err(e)
            }
        }
    }
}

/// Per-agent margin the filters use: `eta` for first-order barriers, `eta'`
/// for cascades.
fn agent_margins(report: &MarginReport) -> Vec<f64> {
    report.eta_prime.clone().unwrap_or_else(|| report.eta.clone())
}

/// Simulates `scenario` to its horizon. A module error stops the run; the
/// trace up to and including the failing event is kept.
pub fn run_recorded(scenario: &Scenario, seed: u64) -> Result<RunOutput> {
    scenario.validate()?;
    let config = scenario.resolve_margins()?;
    run_with_margins(scenario, seed, &config)
}

/// [`run_recorded`] with margin constants already resolved, so sweeps can
/// share one estimate.
pub fn run_with_margins(scenario: &Scenario, seed: u64, config: &MarginConfig) -> Result<RunOutput> {
    let models = scenario.models();
    let margins = scenario.margin_report(config);
    let cascade = scenario.cascade(margins.xi)?;
    let adversary_cascade = scenario.adversary_cascade()?;
    let layout = Layout::states(&models);
    let x0 = scenario.initial_state();
    let blocks: Vec<DVector<f64>> = (0..models.len()).map(|i| layout.slice(&x0, i)).collect();
    let input_dims: Vec<usize> = models.iter().map(|m| m.input_dim()).collect();
    let members = |role: Role| -> Vec<usize> { (0..models.len()).filter(|&i| models[i].role == role).collect() };
    let tables =
        [BroadcastTable::new(&input_dims, &members(Role::Normal)), BroadcastTable::new(&input_dims, &members(Role::Adversarial))];
    let times = generate_schedule(&scenario.schedule(seed), scenario.horizon)?;
    let mut world = World {
        scenario,
        state: SystemState::new(&models, &blocks)?,
        disturbance: DisturbanceProcess::new(scenario.disturbance.clone(), scenario.disturbance_seed(seed), &models),
        models,
        margin: agent_margins(&margins),
        cascade,
        adversary_cascade,
        tables,
        central: None,
        trace: Trace::new(scenario.order()),
        steps: 0,
    };
    world.trace.observe_step(0.0, world.cascade.barrier.eval_h(&world.models, &world.state.x));
    world.record(EventKind::Step, None, None, None)?;
    let mut queue = EventQueue::from_times(&times);
    let mut error = None;
    loop {
        match step_event(&mut queue, &mut world) {
            Ok(Some(_)) => {}
            Ok(None) => break,
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    if error.is_none() && world.state.time < scenario.horizon {
        if let Err(e) = world.advance_to(scenario.horizon) {
            error = Some(e);
        }
    }
    Ok(RunOutput { trace: world.trace, margins, error })
}

/// Simulates `scenario`, failing on the first module error.
pub fn run(scenario: &Scenario, seed: u64) -> Result<Trace> {
    let out = run_recorded(scenario, seed)?;
    match out.error {
        Some(e) => Err(e),
        None => Ok(out.trace),
    }
}
