//! Model management: message compression, co-versioning provenance on a
//! hash-chained append-only log, the replacement trigger, and deployment
//! selection.

mod chain;
mod compression;
mod coversion;
mod deployment;
mod trigger;
pub mod wire;

pub use chain::{sha256, ChainBody, Digest, HashChain, Sealed, GENESIS_DIGEST};
pub use compression::{compress, decompress, CompressedUpdate, Scheme, SchemeParams};
pub use coversion::{CoVersion, CoVersionRecord, CoVersionRegistry, Contribution};
pub use deployment::{assign_new_users, select_deployment, DeploymentPlan};
pub use trigger::{check_replacement_trigger, round_breaches, TriggerState};
