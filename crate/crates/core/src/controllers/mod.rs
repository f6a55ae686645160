//! Control policies: safety filters, adversarial inputs and nominal trackers.

mod broadcast;
mod filters;
mod nominal;
mod unicycle;

pub use broadcast::{BroadcastEntry, BroadcastTable};
pub use filters::{
    adversarial_input, adversary_envelope, centralized_filter, distributed_filter, high_order_filter, FilterOutcome,
    FilterStatus, SafetyRow,
};
pub use nominal::{nominal_input, Bezier, NominalPolicy, TrackingOrder};
pub use unicycle::{unicycle_io, unicycle_io_inverse};

use serde::{Deserialize, Serialize};

/// How an agent computes its input at a sampling instant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Joint QP over all normal agents; requires synchronous sampling.
    NormalCentralized,
    /// Agent-local QP using broadcast inputs of teammates.
    NormalDistributed,
    /// Agent-local QP on the last cascade level.
    NormalHighOrder,
    /// Input maximizing the agent's contribution to the barrier derivative.
    AdversarialMax,
    /// Nominal input projected onto the input set.
    NominalOnly,
    /// Nominal input filtered against the agent's own team barrier, ignoring
    /// everyone else.
    NominalFiltered,
}
