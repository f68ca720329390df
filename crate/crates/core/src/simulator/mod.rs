//! Discrete-event simulation of a federated learning deployment.
//!
//! A [`Scenario`] describes the clients, their devices and networks, the
//! aggregation strategy and the optional training patterns. [`run_scenario`]
//! plays it out on a virtual clock and returns one [`MetricsRecord`] per
//! event plus the registries the run built up.

mod engine;
pub mod events;
pub mod lifecycle;
pub mod metrics;
pub mod profile;
pub mod scenario;

pub use engine::{run_scenario, RunOutput};
pub use events::{EventKind, EventQueue, SimEvent};
pub use lifecycle::{Lifecycle, LifecycleState};
pub use metrics::{MetricsRecord, Summary};
pub use profile::{compute_time, sample_dropout, transfer_time, DeviceProfile, NetworkProfile, ProfileConfig};
pub use scenario::{AggregatorConfig, Scenario};
