//! Asynchronous sampling instants and the event loop that drives them.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling configuration of one agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSampling {
    /// Nominal period `Gamma_i` (s).
    pub period: f64,
    /// Jitter bound `delta_i^max` (s); gaps are `period + U(-jitter, jitter)`.
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSchedule {
    pub agents: Vec<AgentSampling>,
    pub rng_seed: u64,
}

impl SampleSchedule {
    pub fn validate(&self) -> Result<()> {
        for (agent, s) in self.agents.iter().enumerate() {
            if !(s.period > 0.0) || !(s.jitter >= 0.0) || s.jitter >= s.period {
                return Err(Error::JitterExceedsPeriod { agent, period: s.period, jitter: s.jitter });
            }
        }
        Ok(())
    }

    /// `max_i Gamma_i` and `max_i delta_i^max`.
    pub fn extremes(&self) -> (f64, f64) {
        self.agents.iter().fold((0.0, 0.0), |(g, d), s| (f64::max(g, s.period), f64::max(d, s.jitter)))
    }
}

/// Sampling instants of every agent in `[0, horizon]`, starting at 0.
pub fn generate_schedule(schedule: &SampleSchedule, horizon: f64) -> Result<Vec<Vec<f64>>> {
    schedule.validate()?;
    Ok(schedule
        .agents
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(schedule.rng_seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut times = vec![0.0];
            let mut k: u64 = 0;
            let mut jitter_sum = 0.0;
            loop {
                k += 1;
                if s.jitter > 0.0 {
                    jitter_sum += rng.random_range(-s.jitter..=s.jitter);
                }
                // k * period + accumulated jitter avoids drift from repeated addition
                let t = k as f64 * s.period + jitter_sum;
                if t > horizon {
                    break;
                }
                times.push(t);
            }
            times
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub agent: usize,
}

impl Eq for Event {}

impl Ord for Event {
    // reversed so the max-heap pops the earliest event, lowest id first
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.agent.cmp(&self.agent))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Time-ordered sampling events; simultaneous events pop by ascending agent id.
#[derive(Clone, Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_times(times: &[Vec<f64>]) -> Self {
        let mut q = Self::new();
        for (agent, ts) in times.iter().enumerate() {
            for &time in ts {
                q.push(Event { time, agent });
            }
        }
        q
    }

    pub fn push(&mut self, e: Event) {
        self.heap.push(e);
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek(&self) -> Option<&Event> {
        self.heap.peek()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// A closed loop that can be advanced in time and sampled by one agent.
pub trait SampledSystem {
    /// Integrates every agent under its held input up to `time`.
    fn advance_to(&mut self, time: f64) -> Result<()>;
    /// Agent `agent` reads the state, computes and holds a new input, and
    /// broadcasts it to its teammates.
    fn sample(&mut self, agent: usize) -> Result<()>;
}

/// Processes the next event; returns it, or `None` if the queue is empty.
pub fn step_event(queue: &mut EventQueue, world: &mut impl SampledSystem) -> Result<Option<Event>> {
    let Some(event) = queue.pop() else {
        return Ok(None);
    };
    world.advance_to(event.time)?;
    world.sample(event.agent)?;
    Ok(Some(event))
}
