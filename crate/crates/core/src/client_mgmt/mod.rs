//! Client management: the registry of participating devices, per-round
//! client selection, and similarity-based client clustering.

mod clustering;
mod registry;
mod selection;

pub use clustering::{adjusted_rand_index, cluster_clients, distance, ClusterAssignment, Metric};
pub use registry::{ClientRecord, ClientRegistry, DataSummary, Registration};
pub use selection::{select_clients, SelectionCriteria, SelectionMode};
