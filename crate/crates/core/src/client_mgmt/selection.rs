use std::cmp::Ordering;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ClientRecord, ClientRegistry};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Rank by `compute_capacity * bandwidth`, descending.
    Resource,
    /// Rank by sample count, descending, after the heterogeneity cap.
    Data,
    /// Rank by most recent loss, ascending; clients without history last.
    Performance,
    /// Seeded uniform subset, salted by round.
    Random,
    /// Rank by `n_samples * class_centroid_distance`, descending.
    Cdw,
}

fn default_top_k() -> usize {
    usize::MAX
}
fn default_max_heterogeneity() -> f64 {
    1.0
}

/// Eligibility thresholds plus a ranking mode. Every mode first filters to
/// online clients meeting `min_compute`, `min_bandwidth` and (for `data`)
/// `max_heterogeneity`, then ranks and keeps the first `top_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionCriteria {
    pub mode: SelectionMode,
    #[serde(default)]
    pub min_compute: f64,
    #[serde(default)]
    pub min_bandwidth: f64,
    /// Cap on the dominant-class fraction of a client's data.
    #[serde(default = "default_max_heterogeneity")]
    pub max_heterogeneity: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

impl SelectionCriteria {
    pub fn new(mode: SelectionMode, top_k: usize) -> Self {
        Self {
            mode,
            min_compute: 0.0,
            min_bandwidth: 0.0,
            max_heterogeneity: default_max_heterogeneity(),
            top_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        for (name, v) in [
            ("min_compute", self.min_compute),
            ("min_bandwidth", self.min_bandwidth),
            ("max_heterogeneity", self.max_heterogeneity),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    fn eligible(&self, r: &ClientRecord) -> bool {
        r.online
            && r.compute_capacity >= self.min_compute
            && r.bandwidth >= self.min_bandwidth
            && (self.mode != SelectionMode::Data
                || r.data_summary.dominant_class_fraction() <= self.max_heterogeneity)
    }
}

fn desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

/// Pick at most `top_k` eligible clients for `round`. An empty result means
/// the round has no eligible participant.
pub fn select_clients(
    registry: &ClientRegistry,
    criteria: &SelectionCriteria,
    round: u64,
    seed: u64,
) -> Result<Vec<String>> {
    criteria.validate()?;
    if registry.is_empty() {
        return Err(Error::Config("cannot select from an empty registry".into()));
    }
    // Snapshot is ordered by client id, which is the tie-break everywhere.
    let mut pool: Vec<ClientRecord> =
        registry.snapshot().into_iter().filter(|r| criteria.eligible(r)).collect();
    match criteria.mode {
        SelectionMode::Random => {
            pool.shuffle(&mut rng::stream(seed, "selection", &[round]));
        }
        SelectionMode::Resource => pool.sort_by(|a, b| {
            desc(a.compute_capacity * a.bandwidth, b.compute_capacity * b.bandwidth)
                .then_with(|| a.client_id.cmp(&b.client_id))
        }),
        SelectionMode::Data => pool.sort_by(|a, b| {
            b.data_summary
                .n_samples
                .cmp(&a.data_summary.n_samples)
                .then_with(|| a.client_id.cmp(&b.client_id))
        }),
        SelectionMode::Performance => pool.sort_by(|a, b| {
            let la = a.last_loss().unwrap_or(f64::INFINITY);
            let lb = b.last_loss().unwrap_or(f64::INFINITY);
            la.total_cmp(&lb).then_with(|| a.client_id.cmp(&b.client_id))
        }),
        SelectionMode::Cdw => {
            let score = |r: &ClientRecord| {
                r.data_summary.n_samples as f64 * r.data_summary.class_centroid_distance.unwrap_or(0.0)
            };
            pool.sort_by(|a, b| desc(score(a), score(b)).then_with(|| a.client_id.cmp(&b.client_id)))
        }
    }
    Ok(pool.into_iter().take(criteria.top_k).map(|r| r.client_id).collect())
}
