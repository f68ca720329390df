//! Federated learning architectural patterns and a deterministic
//! discrete-event simulator to compose and measure them.
//!
//! The crate is organized by responsibility:
//!
//! - [`learning`]: parameter vectors, synthetic non-IID datasets, local
//!   training and evaluation for linear and logistic regression.
//! - [`client_mgmt`]: client registry, per-round selection and
//!   similarity-based client clustering.
//! - [`model_mgmt`]: update compression, the hash-chained co-versioning
//!   log, the model replacement trigger and deployment selection.
//! - [`training_patterns`]: multi-task coupling, heterogeneous data
//!   balancing, contribution scoring and reward distribution.
//! - [`aggregation`]: FedAvg plus asynchronous, hierarchical, gossip and
//!   secure (pairwise-masked) aggregation.
//! - [`simulator`]: the event loop that runs a [`simulator::Scenario`] end
//!   to end and emits a metrics stream.
//! - [`cli`]: the `fedsim` command verbs (`run`, `validate`, `compare`,
//!   `lineage`) as library functions.
//!
//! Every capability has a runnable program under `examples/`; start with
//! `cargo run --example quickstart`.

pub mod aggregation;
pub mod cli;
pub mod client_mgmt;
pub mod error;
pub mod learning;
pub mod model_mgmt;
pub mod rng;
pub mod simulator;
pub mod training_patterns;

pub use error::{Error, Result};
pub use learning::{Dataset, EvalReport, ParamVector, TaskKind, TrainingConfig};
