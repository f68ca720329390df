use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::ParamVector;

use super::{fedavg, ModelUpdate};

/// Two-tier cadence: edges aggregate every `k1` local rounds, the central
/// server aggregates the edges every `k2` edge aggregations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchicalSchedule {
    pub k1: u32,
    pub k2: u32,
    pub edge_groups: BTreeMap<String, BTreeSet<String>>,
}

impl HierarchicalSchedule {
    /// Local updates between central aggregations.
    pub fn central_period(&self) -> u64 {
        self.k1 as u64 * self.k2 as u64
    }

    pub fn edge_of(&self, client_id: &str) -> Option<&str> {
        self.edge_groups.iter().find(|(_, m)| m.contains(client_id)).map(|(e, _)| e.as_str())
    }

    /// Checks the cadence and that groups are non-empty and disjoint. When
    /// `clients` is given, the groups must cover exactly those clients.
    pub fn validate(&self, clients: Option<&BTreeSet<String>>) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::Config("hierarchical k1 and k2 must be >= 1".into()));
        }
        if self.edge_groups.is_empty() {
            return Err(Error::Topology("hierarchical schedule has no edge groups".into()));
        }
        let mut seen = BTreeSet::new();
        for (edge, members) in &self.edge_groups {
            if members.is_empty() {
                return Err(Error::Topology(format!("edge {edge} has no clients")));
            }
            for m in members {
                if !seen.insert(m.as_str()) {
                    return Err(Error::Topology(format!("client {m} belongs to more than one edge")));
                }
            }
        }
        if let Some(clients) = clients {
            if let Some(orphan) = clients.iter().find(|c| !seen.contains(c.as_str())) {
                return Err(Error::Topology(format!("client {orphan} has no edge")));
            }
            if let Some(stray) = seen.iter().find(|c| !clients.contains(**c)) {
                return Err(Error::Topology(format!("edge member {stray} is not a known client")));
            }
        }
        Ok(())
    }
}

/// Result of one two-tier aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalOutcome {
    /// Edge models as updates carrying their group's total sample count.
    /// Edges without updates are absent.
    pub edges: BTreeMap<String, ModelUpdate>,
    pub central: ParamVector,
}

/// FedAvg within each edge group, then a sample-weighted FedAvg over the
/// edge models.
pub fn hierarchical_round(schedule: &HierarchicalSchedule, client_updates: &[ModelUpdate]) -> Result<HierarchicalOutcome> {
    let edges = edge_aggregate(schedule, client_updates)?;
    let central = fedavg(&edges.values().cloned().collect::<Vec<_>>())?;
    Ok(HierarchicalOutcome { edges, central })
}

/// Only the edge tier of [`hierarchical_round`].
pub fn edge_aggregate(
    schedule: &HierarchicalSchedule,
    client_updates: &[ModelUpdate],
) -> Result<BTreeMap<String, ModelUpdate>> {
    let mut grouped: BTreeMap<&str, Vec<ModelUpdate>> = BTreeMap::new();
    for u in client_updates {
        let edge = schedule
            .edge_of(&u.client_id)
            .ok_or_else(|| Error::Topology(format!("client {} has no edge", u.client_id)))?;
        grouped.entry(edge).or_default().push(u.clone());
    }
    grouped
        .into_iter()
        .map(|(edge, ups)| {
            let n: usize = ups.iter().map(|u| u.n_samples).sum();
            let origin = ups.iter().map(|u| u.origin_round).max().unwrap_or(0);
            let arrival = ups.iter().map(|u| u.arrival_time).fold(0.0, f64::max);
            let params = fedavg(&ups)?;
            Ok((edge.to_string(), ModelUpdate::new(edge, origin, params, n)?.at(arrival)))
        })
        .collect()
}

/// What happens after a given local round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Local,
    Edge,
    /// Edge aggregation followed by central aggregation.
    Central,
}

/// Counts local updates and reports when each tier aggregates.
#[derive(Debug, Clone)]
pub struct CadenceDriver {
    k1: u64,
    period: u64,
    local_updates: u64,
}

impl CadenceDriver {
    pub fn new(schedule: &HierarchicalSchedule) -> Result<Self> {
        if schedule.k1 == 0 || schedule.k2 == 0 {
            return Err(Error::Config("hierarchical k1 and k2 must be >= 1".into()));
        }
        Ok(Self { k1: schedule.k1 as u64, period: schedule.central_period(), local_updates: 0 })
    }

    pub fn local_updates(&self) -> u64 {
        self.local_updates
    }

    /// Record one more local update and return the tier it completes.
    pub fn step(&mut self) -> Tier {
        self.local_updates += 1;
        if self.local_updates % self.period == 0 {
            Tier::Central
        } else if self.local_updates % self.k1 == 0 {
            Tier::Edge
        } else {
            Tier::Local
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::update;

    fn schedule(k1: u32, k2: u32, groups: &[(&str, &[&str])]) -> HierarchicalSchedule {
        HierarchicalSchedule {
            k1,
            k2,
            edge_groups: groups
                .iter()
                .map(|(e, m)| (e.to_string(), m.iter().map(|s| s.to_string()).collect()))
                .collect(),
        }
    }

    #[test]
    fn central_every_k1_k2_local_updates() {
        let mut d = CadenceDriver::new(&schedule(2, 3, &[("e", &["a"])])).unwrap();
        let tiers: Vec<Tier> = (0..18).map(|_| d.step()).collect();
        let central: Vec<usize> = (0..18).filter(|&i| tiers[i] == Tier::Central).map(|i| i + 1).collect();
        let edge: Vec<usize> = (0..18).filter(|&i| tiers[i] == Tier::Edge).map(|i| i + 1).collect();
        assert_eq!(central, vec![6, 12, 18]);
        assert_eq!(edge, vec![2, 4, 8, 10, 14, 16]);
    }

    #[test]
    fn single_edge_collapses_to_fedavg() {
        let s = schedule(1, 1, &[("e", &["a", "b", "c"])]);
        let ups = vec![update("a", &[1.0, 2.0], 3), update("b", &[-1.0, 0.5], 7), update("c", &[0.1, 0.2], 1)];
        assert_eq!(hierarchical_round(&s, &ups).unwrap().central, fedavg(&ups).unwrap());
    }

    #[test]
    fn identical_groups_match_flat_fedavg() {
        let s = schedule(1, 1, &[("e1", &["a", "b"]), ("e2", &["c", "d"])]);
        let ups = vec![
            update("a", &[0.3, -1.2], 20),
            update("b", &[1.1, 0.4], 30),
            update("c", &[0.3, -1.2], 20),
            update("d", &[1.1, 0.4], 30),
        ];
        let h = hierarchical_round(&s, &ups).unwrap();
        for (x, y) in h.central.values().iter().zip(fedavg(&ups).unwrap().values()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(h.edges["e1"].n_samples, 50);
    }

    #[test]
    fn unequal_groups_still_weight_by_samples() {
        let s = schedule(1, 1, &[("e1", &["a"]), ("e2", &["b", "c"])]);
        let ups = vec![update("a", &[0.0], 10), update("b", &[3.0], 5), update("c", &[6.0], 5)];
        let h = hierarchical_round(&s, &ups).unwrap();
        assert!((h.central.values()[0] - fedavg(&ups).unwrap().values()[0]).abs() < 1e-12);
    }

    #[test]
    fn orphans_and_overlaps_are_topology_errors() {
        let s = schedule(1, 1, &[("e", &["a"])]);
        assert!(matches!(hierarchical_round(&s, &[update("z", &[0.0], 1)]), Err(Error::Topology(_))));
        let overlap = schedule(1, 1, &[("e1", &["a"]), ("e2", &["a"])]);
        assert!(matches!(overlap.validate(None), Err(Error::Topology(_))));
        let clients: BTreeSet<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(s.validate(Some(&clients)), Err(Error::Topology(_))));
        assert!(schedule(0, 1, &[("e", &["a"])]).validate(None).is_err());
    }

    #[test]
    fn failed_edge_is_simply_absent() {
        let s = schedule(1, 1, &[("e1", &["a"]), ("e2", &["b"])]);
        let h = hierarchical_round(&s, &[update("a", &[2.0], 1)]).unwrap();
        assert_eq!(h.edges.len(), 1);
        assert_eq!(h.central.values(), &[2.0]);
    }
}
