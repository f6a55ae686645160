//! Built-in scenarios. The JSON files under `scenarios/` are these, serialized.
//!
//! Formation geometry, obstacle layouts, `rho`, the class-K gains and the
//! collision radii are illustrative choices; the input limits, sampling
//! parameters, disturbance bounds and margins follow the published setups.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{AgentSpec, BarrierSpec, Flags, MarginSpec, Obstacle, Scenario};
use crate::barrier::{AlphaFunction, BarrierAtom};
use crate::controllers::{Bezier, ControllerKind, NominalPolicy, TrackingOrder};
use crate::dynamics::{DisturbanceKind, Dynamics, Role, StateBox};
use crate::polytope::PolytopeSpec;
use crate::scheduler::AgentSampling;

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 6] = ["sim1_unicycles", "sim2_doubleint", "desk_arena", "head_on", "strong_authority", "solo"];

pub fn by_name(name: &str) -> Option<Scenario> {
    Some(match name {
        "sim1_unicycles" => sim1_unicycles(),
        "sim2_doubleint" => sim2_doubleint(),
        "desk_arena" => desk_arena(),
        "head_on" => head_on(),
        "strong_authority" => strong_authority(),
        "solo" => solo(),
        _ => return None,
    })
}

fn circle(radius: f64, count: usize, k: usize, phase: f64) -> [f64; 2] {
    let a = phase + TAU * k as f64 / count as f64;
    [radius * a.cos(), radius * a.sin()]
}

fn si_agent(role: Role, half: f64, at: [f64; 2], controller: ControllerKind, phi: f64, sampling: AgentSampling) -> AgentSpec {
    AgentSpec {
        dynamics: Dynamics::SingleIntegrator { dim: 2 },
        input_set: PolytopeSpec::symmetric_box(&[half, half]),
        role,
        disturbance_bound: phi,
        initial_state: at.to_vec(),
        controller,
        nominal: NominalPolicy::Zero,
        sampling,
    }
}

/// Five unicycles: three normal agents tracking a pentagon formation past two
/// obstacles, two adversaries steering at whichever normal agent they
/// threaten most.
pub fn sim1_unicycles() -> Scenario {
    let b = 0.5;
    let r_c = 1.0;
    let curve = Bezier { points: [vec![0.0, 0.0], vec![12.0, -2.0], vec![24.0, 14.0], vec![36.0, 10.0]], t0: 0.0, tf: 20.0 };
    let sampling = AgentSampling { period: 0.01, jitter: 0.002 };
    let phase = PI / 2.0;
    let agents = (0..5)
        .map(|k| {
            let offset = circle(3.0, 5, k, phase);
            let normal = k < 3;
            // adversaries start outside their slot, facing the formation
            let (at, heading) =
                if normal { (offset, 0.0) } else { ([offset[0] * 1.6, offset[1] * 1.6], offset[1].atan2(offset[0]) + PI) };
            // the look-ahead point sits at the formation point
            let state = vec![at[0] - b * f64::cos(heading), at[1] - b * f64::sin(heading), heading];
            AgentSpec {
                dynamics: Dynamics::Unicycle { b_offset: b },
                input_set: if normal {
                    PolytopeSpec::UnicycleIo { v_max: 4.0, omega_max: 2.0, b_offset: b }
                } else {
                    PolytopeSpec::UnicycleIo { v_max: 2.0, omega_max: 1.0, b_offset: b }
                },
                role: if normal { Role::Normal } else { Role::Adversarial },
                disturbance_bound: 1.73,
                initial_state: state,
                controller: if normal { ControllerKind::NormalDistributed } else { ControllerKind::AdversarialMax },
                nominal: if normal {
                    NominalPolicy::FormationBezier {
                        curve: curve.clone(),
                        offset: offset.to_vec(),
                        k1: 1.0,
                        k2: 0.0,
                        order: TrackingOrder::First,
                        literal_paper_sign: false,
                    }
                } else {
                    NominalPolicy::Zero
                },
                sampling,
            }
        })
        .collect();
    Scenario {
        name: "sim1_unicycles".into(),
        description: "Five unicycles under look-ahead feedback linearization; three track a pentagon formation, \
                      two adversaries maximize the composed barrier. Formation, obstacles, R_c = 1, b = 0.5 and rho \
                      are illustrative."
            .into(),
        agents,
        barrier: BarrierSpec { rho: 2.0, pair_radius: r_c + 2.0 * b, collisions: true, atoms: Vec::new(), neighbor_radius: None },
        alphas: vec![AlphaFunction::linear(0.2)],
        adversary_barrier: None,
        adversary_alphas: Vec::new(),
        margins: MarginSpec { eta: Some(8.0566), sample_count: 10_000, l_prime: 1.0, ..Default::default() },
        horizon: 20.0,
        dt_max: 1e-3,
        disturbance: DisturbanceKind::PiecewiseConstantRandom { resample_dt: 0.05 },
        bounding_box: Some(StateBox { lo: [-10.0, -15.0, -PI].repeat(5), hi: [50.0, 25.0, PI].repeat(5) }),
        obstacles: vec![Obstacle { center: vec![14.0, 9.0], radius: 1.0 }, Obstacle { center: vec![26.0, 4.0], radius: 1.0 }],
        flags: Flags::default(),
        record_stride: 10,
    }
}

/// Control points of the second simulation's formation trajectory.
pub fn sim2_curve() -> Bezier {
    Bezier {
        points: [vec![0.0, 0.0, 0.0], vec![-25.0, 25.0, 30.0], vec![125.0, 75.0, -30.0], vec![100.0, 100.0, 0.0]],
        t0: 0.0,
        tf: 140.0,
    }
}

/// Ten radius-2 obstacles drawn uniformly from the box spanned by the second
/// half of the trajectory (plus the formation radius), from `seed`.
pub fn sim2_obstacles(seed: u64) -> Vec<Obstacle> {
    let curve = sim2_curve();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for k in 0..=50 {
        let t = 70.0 + 70.0 * k as f64 / 50.0;
        let p = curve.position(t).expect("inside the window");
        for d in 0..3 {
            lo[d] = lo[d].min(p[d] - 30.0);
            hi[d] = hi[d].max(p[d] + 30.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..10)
        .map(|_| {
            let c: Vec<f64> = (0..3).map(|d| (rng.random_range(lo[d]..hi[d]) * 100.0).round() / 100.0).collect();
            Obstacle { center: c, radius: 2.0 }
        })
        .collect()
}

/// Eight damped double integrators in space: four normal agents on a
/// radius-30 formation circle, four pursuers (one normal agent gets two).
pub fn sim2_doubleint() -> Scenario {
    let curve = sim2_curve();
    let beta = 3.0;
    let targets = [0, 2, 4, 4];
    let agents = (0..8)
        .map(|k| {
            let [ox, oy] = circle(30.0, 8, k, 0.0);
            let normal = k % 2 == 0;
            let half = if normal { 2.0 } else { 1.5 };
            AgentSpec {
                dynamics: Dynamics::DoubleIntegrator { dim: 3, damping: beta },
                input_set: PolytopeSpec::symmetric_box(&[half; 3]),
                role: if normal { Role::Normal } else { Role::Adversarial },
                disturbance_bound: 0.4899,
                initial_state: vec![ox, oy, 0.0, 0.0, 0.0, 0.0],
                controller: if normal { ControllerKind::NormalHighOrder } else { ControllerKind::NominalFiltered },
                nominal: if normal {
                    NominalPolicy::FormationBezier {
                        curve: curve.clone(),
                        offset: vec![ox, oy, 0.0],
                        k1: 2.0,
                        k2: 2.0 * 2f64.sqrt(),
                        order: TrackingOrder::Second,
                        literal_paper_sign: false,
                    }
                } else {
                    NominalPolicy::PursuitPd { target: targets[k / 2], k1: 1.0, k2: 2.0 }
                },
                sampling: AgentSampling { period: 0.07, jitter: 0.03 },
            }
        })
        .collect();
    let spec =
        |radius| BarrierSpec { rho: 1.0, pair_radius: 2.0, collisions: true, atoms: Vec::new(), neighbor_radius: Some(radius) };
    Scenario {
        name: "sim2_doubleint".into(),
        description: "Eight double integrators in R^3 with damping 3; normal agents run the second-order cascade \
                      filter, adversaries pursue assigned targets through their own filter against obstacles and \
                      each other. Collision radius, rho, alpha gains and obstacle seed are illustrative."
            .into(),
        agents,
        barrier: spec(35.0),
        alphas: vec![AlphaFunction::linear(1.0), AlphaFunction::linear(1.0)],
        adversary_barrier: Some(spec(35.0)),
        adversary_alphas: vec![AlphaFunction::linear(1.0), AlphaFunction::linear(1.0)],
        margins: MarginSpec { eta: Some(5.0), xi: Some(39.19), sample_count: 10_000, l_prime: 1.0, ..Default::default() },
        horizon: 140.0,
        dt_max: 1e-3,
        disturbance: DisturbanceKind::PiecewiseConstantRandom { resample_dt: 0.05 },
        bounding_box: None,
        obstacles: sim2_obstacles(11),
        flags: Flags::default(),
        record_stride: 10,
    }
}

/// Two normal single integrators swap sides past a slower adversary, with
/// `eta` computed from sampled constants.
pub fn desk_arena() -> Scenario {
    let sampling = AgentSampling { period: 0.01, jitter: 0.002 };
    let swap = |from: f64| {
        let curve = Bezier {
            points: [vec![from, 0.0], vec![from / 3.0, 0.0], vec![-from / 3.0, 0.0], vec![-from, 0.0]],
            t0: 0.0,
            tf: 20.0,
        };
        NominalPolicy::FormationBezier {
            curve,
            offset: vec![0.0, 0.0],
            k1: 1.0,
            k2: 0.0,
            order: TrackingOrder::First,
            literal_paper_sign: false,
        }
    };
    let mut agents = vec![
        si_agent(Role::Normal, 2.0, [-4.0, 0.0], ControllerKind::NormalDistributed, 0.05, sampling),
        si_agent(Role::Normal, 2.0, [4.0, 0.0], ControllerKind::NormalDistributed, 0.05, sampling),
        si_agent(Role::Adversarial, 1.0, [0.0, 3.0], ControllerKind::AdversarialMax, 0.05, sampling),
    ];
    agents[0].nominal = swap(-4.0);
    agents[1].nominal = swap(4.0);
    Scenario {
        name: "desk_arena".into(),
        description: "Two normal single integrators trade places while a slower adversary chases them.".into(),
        agents,
        barrier: BarrierSpec { rho: 1.0, pair_radius: 1.0, collisions: true, atoms: Vec::new(), neighbor_radius: None },
        alphas: vec![AlphaFunction::linear(1.0)],
        adversary_barrier: None,
        adversary_alphas: Vec::new(),
        margins: MarginSpec { sample_count: 10_000, l_prime: 1.0, seed: 3, ..Default::default() },
        horizon: 20.0,
        dt_max: 1e-3,
        disturbance: DisturbanceKind::PiecewiseConstantRandom { resample_dt: 0.05 },
        bounding_box: Some(StateBox { lo: vec![-6.0; 6], hi: vec![6.0; 6] }),
        obstacles: Vec::new(),
        flags: Flags::default(),
        record_stride: 10,
    }
}

fn line_agent(role: Role, half: f64, at: f64, controller: ControllerKind) -> AgentSpec {
    AgentSpec {
        dynamics: Dynamics::SingleIntegrator { dim: 1 },
        input_set: PolytopeSpec::symmetric_box(&[half]),
        role,
        disturbance_bound: 0.05,
        initial_state: vec![at],
        controller,
        nominal: NominalPolicy::Zero,
        sampling: AgentSampling { period: 0.01, jitter: 0.002 },
    }
}

fn line_scenario(name: &str, description: &str, agents: Vec<AgentSpec>) -> Scenario {
    Scenario {
        name: name.into(),
        description: description.into(),
        agents,
        barrier: BarrierSpec { rho: 1.0, pair_radius: 1.0, collisions: true, atoms: Vec::new(), neighbor_radius: None },
        alphas: vec![AlphaFunction::linear(1.0)],
        adversary_barrier: None,
        adversary_alphas: Vec::new(),
        margins: MarginSpec {
            mu: Some(2.5),
            c_f: Some(0.0),
            c_g: Some(2.0),
            c_alpha: Some(12.0),
            c_gamma: Some(2.0),
            c_h: Some(12.0),
            u_max: Some(1.0),
            sample_count: 10_000,
            l_prime: 1.0,
            ..Default::default()
        },
        horizon: 5.0,
        dt_max: 1e-3,
        disturbance: DisturbanceKind::PiecewiseConstantRandom { resample_dt: 0.05 },
        bounding_box: Some(StateBox { lo: vec![-3.0, -3.0], hi: vec![3.0, 3.0] }),
        obstacles: Vec::new(),
        flags: Flags::default(),
        record_stride: 10,
    }
}

/// A normal agent and an adversary on a line with the same speed limit: the
/// normal agent's best retreat exactly cancels the adversary's approach.
pub fn head_on() -> Scenario {
    line_scenario(
        "head_on",
        "Equal-authority head-on pair on a line; the boundary condition cannot hold.",
        vec![
            line_agent(Role::Normal, 1.0, -1.5, ControllerKind::NormalDistributed),
            line_agent(Role::Adversarial, 1.0, 1.5, ControllerKind::AdversarialMax),
        ],
    )
}

/// Two normal agents on a line with a large speed limit and no adversary.
pub fn strong_authority() -> Scenario {
    line_scenario(
        "strong_authority",
        "Two fast normal agents on a line and no adversary; the boundary condition holds.",
        vec![
            line_agent(Role::Normal, 10.0, -1.5, ControllerKind::NormalDistributed),
            line_agent(Role::Normal, 10.0, 1.5, ControllerKind::NormalDistributed),
        ],
    )
}

/// One normal agent held inside a disk, nothing else.
pub fn solo() -> Scenario {
    let mut agent = si_agent(
        Role::Normal,
        1.0,
        [0.5, 0.0],
        ControllerKind::NormalDistributed,
        0.0,
        AgentSampling { period: 0.01, jitter: 0.0 },
    );
    agent.disturbance_bound = 0.0;
    Scenario {
        name: "solo".into(),
        description: "A single agent with no nominal motion inside a unit disk.".into(),
        agents: vec![agent],
        barrier: BarrierSpec {
            rho: 1.0,
            pair_radius: 1.0,
            collisions: false,
            atoms: vec![BarrierAtom::Containment { i: 0, center: vec![0.0, 0.0], radius: 1.0 }],
            neighbor_radius: None,
        },
        alphas: vec![AlphaFunction::linear(1.0)],
        adversary_barrier: None,
        adversary_alphas: Vec::new(),
        margins: MarginSpec { eta: Some(0.0), l_prime: 1.0, sample_count: 10_000, ..Default::default() },
        horizon: 2.0,
        dt_max: 1e-3,
        disturbance: DisturbanceKind::None,
        bounding_box: None,
        obstacles: Vec::new(),
        flags: Flags::default(),
        record_stride: 1,
    }
}
