//! Combining client updates into a global model.
//!
//! [`fedavg`] is the synchronous baseline. The other aggregators trade
//! some of its simplicity for latency tolerance ([`async_aggregate`]),
//! reduced central traffic ([`hierarchical_round`]), no central server at
//! all ([`gossip_round`]) or hiding individual updates ([`mask`] and
//! [`secure_sum`]).

mod asynchronous;
mod dp;
mod fedavg;
mod gossip;
mod hierarchical;
mod secure;

pub use asynchronous::{async_aggregate, Decay, StalenessPolicy};
pub use dp::dp_noise;
pub use fedavg::fedavg;
pub use gossip::{gossip_round, gossip_round_logged, Exchange, rotating_leader_round, segment_bounds, Topology};
pub use hierarchical::{edge_aggregate, hierarchical_round, CadenceDriver, HierarchicalOutcome, HierarchicalSchedule, Tier};
pub use secure::{
    from_fixed, mask, plain_fixed_sum, secure_sum, secure_sum_fixed, to_fixed, MaskedUpdate, PairSeeds,
    FIXED_SCALE,
};

use crate::error::{Error, Result};
use crate::learning::ParamVector;

/// A locally trained model submitted by one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub client_id: String,
    /// Round of the global model the client started from.
    pub origin_round: u64,
    pub params: ParamVector,
    pub n_samples: usize,
    /// Virtual time of arrival at the aggregator, in ms.
    pub arrival_time: f64,
}

impl ModelUpdate {
    pub fn new(client_id: impl Into<String>, origin_round: u64, params: ParamVector, n_samples: usize) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::Parameter("model update needs n_samples >= 1".into()));
        }
        if params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("model update has non-finite parameters".into()));
        }
        Ok(Self { client_id: client_id.into(), origin_round, params, n_samples, arrival_time: 0.0 })
    }

    pub fn at(mut self, arrival_time: f64) -> Self {
        self.arrival_time = arrival_time;
        self
    }
}

#[cfg(test)]
pub(crate) fn update(id: &str, values: &[f64], n: usize) -> ModelUpdate {
    ModelUpdate::new(id, 0, ParamVector::new(values.to_vec(), 0).unwrap(), n).unwrap()
}
