use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the pattern library and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: expected dimension {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("registry conflict for client {0}: immutable fields differ")]
    RegistryConflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("chain integrity error at record {index}: {reason}")]
    ChainIntegrity { index: usize, reason: String },

    #[error("monitoring error: {0}")]
    Monitoring(String),

    #[error("deployment error: {0}")]
    Deployment(String),

    #[error("balancing impossible: {0}")]
    BalancingImpossible(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("causality error: update from round {origin} applied at round {current}")]
    Causality { origin: u64, current: u64 },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("unrecoverable masks: missing participants {0:?}")]
    UnrecoverableMasks(Vec<String>),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
