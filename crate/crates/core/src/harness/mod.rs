//! Scenario files, the simulation loop, traces and their re-verification.

pub mod presets;
mod run;
mod scenario;
mod trace;
mod verify;

pub use run::{run, run_recorded, run_with_margins, RunOutput, RunReport};
pub use scenario::{AgentSpec, BarrierSpec, Flags, MarginSpec, Obstacle, Scenario};
pub use trace::{EventKind, SampleStatus, Trace, TraceRow, TraceSummary};
pub use verify::{naive_log_sum_exp, verify_invariance, VerifyReport};
