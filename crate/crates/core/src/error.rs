use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("scenario provides no state bounding box")]
    EmptyBoundingBox,

    #[error("polytope has no interior (Chebyshev radius {radius:e})")]
    DegeneratePolytope { radius: f64 },

    #[error("polytope is unbounded")]
    UnboundedPolytope,

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("solver failed: {0}")]
    NumericalFailure(String),

    #[error("barrier gradient is singular: agents {0} and {1} coincide")]
    GradientSingularity(usize, usize),

    #[error("relative degree mismatch: input of agent {agent} appears in psi_{level}")]
    RelativeDegreeMismatch { agent: usize, level: usize },

    #[error("stacked state dimension {0} is too large for the grid check (max 6)")]
    DimensionTooLarge(usize),

    #[error("jitter bound {jitter} is not smaller than period {period} for agent {agent}")]
    JitterExceedsPeriod { agent: usize, period: f64, jitter: f64 },

    #[error("time {time} outside trajectory window [{t0}, {tf}]")]
    TimeOutOfRange { time: f64, t0: f64, tf: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Scenario(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
