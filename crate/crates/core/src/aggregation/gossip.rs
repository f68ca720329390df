use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::learning::ParamVector;
use crate::rng;

/// Undirected peer graph over client ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Topology {
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl Topology {
    pub fn complete<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let ids: BTreeSet<String> = ids.into_iter().collect();
        let adjacency = ids
            .iter()
            .map(|i| (i.clone(), ids.iter().filter(|j| *j != i).cloned().collect()))
            .collect();
        Self { adjacency }
    }

    /// Each client linked to its predecessor and successor in id order.
    pub fn ring<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let ids: Vec<String> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let n = ids.len();
        let mut t = Self::from_edges(ids.iter().cloned(), std::iter::empty()).expect("no edges");
        if n > 1 {
            for i in 0..n {
                t.link(&ids[i], &ids[(i + 1) % n]);
            }
        }
        t
    }

    pub fn from_edges<I, E>(ids: I, edges: E) -> Result<Self>
    where
        I: IntoIterator<Item = String>,
        E: IntoIterator<Item = (String, String)>,
    {
        let mut t = Self { adjacency: ids.into_iter().map(|i| (i, BTreeSet::new())).collect() };
        for (a, b) in edges {
            if a == b {
                return Err(Error::Topology(format!("self loop on {a}")));
            }
            for end in [&a, &b] {
                if !t.adjacency.contains_key(end) {
                    return Err(Error::Topology(format!("edge endpoint {end} is not a client")));
                }
            }
            t.link(&a, &b);
        }
        Ok(t)
    }

    fn link(&mut self, a: &str, b: &str) {
        if a != b {
            self.adjacency.get_mut(a).expect("known node").insert(b.to_string());
            self.adjacency.get_mut(b).expect("known node").insert(a.to_string());
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.adjacency.keys().map(String::as_str)
    }

    pub fn neighbors(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.adjacency.get(id)
    }

    pub fn is_connected(&self) -> bool {
        let Some(start) = self.adjacency.keys().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start.as_str()]);
        let mut queue = VecDeque::from([start.as_str()]);
        while let Some(node) = queue.pop_front() {
            for next in &self.adjacency[node] {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        seen.len() == self.adjacency.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_connected() {
            Ok(())
        } else {
            Err(Error::Topology("gossip topology is not connected".into()))
        }
    }
}

/// Contiguous `[start, end)` blocks covering `0..dim`, sizes equal within one.
pub fn segment_bounds(dim: usize, segments: usize) -> Vec<(usize, usize)> {
    let (base, extra) = (dim / segments, dim % segments);
    let mut start = 0;
    (0..segments)
        .map(|s| {
            let end = start + base + usize::from(s < extra);
            let block = (start, end);
            start = end;
            block
        })
        .collect()
}

/// One segment swap between two clients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub initiator: String,
    pub peer: String,
    pub start: usize,
    pub end: usize,
}

/// One round of segmented gossip. Clients act in id order; each picks up to
/// `fanout` distinct neighbors, sends segment `s` to pick `s % picks`, and
/// both ends of every exchange keep the pairwise mean of that segment.
pub fn gossip_round(
    states: &BTreeMap<String, ParamVector>,
    topology: &Topology,
    fanout: usize,
    segments: usize,
    seed: u64,
) -> Result<BTreeMap<String, ParamVector>> {
    gossip_round_logged(states, topology, fanout, segments, seed).map(|(s, _)| s)
}

/// [`gossip_round`] that also returns every exchange in the order performed.
pub fn gossip_round_logged(
    states: &BTreeMap<String, ParamVector>,
    topology: &Topology,
    fanout: usize,
    segments: usize,
    seed: u64,
) -> Result<(BTreeMap<String, ParamVector>, Vec<Exchange>)> {
    let Some(first) = states.values().next() else {
        return Ok((BTreeMap::new(), Vec::new()));
    };
    let dim = first.dim();
    if fanout == 0 {
        return Err(Error::Config("gossip fanout must be >= 1".into()));
    }
    if segments == 0 || segments > dim {
        return Err(Error::Config(format!("gossip segments must be in 1..={dim}, got {segments}")));
    }
    for (id, s) in states {
        s.ensure_dim(dim)?;
        if topology.neighbors(id).is_none() {
            return Err(Error::Topology(format!("client {id} is not in the topology")));
        }
    }
    let bounds = segment_bounds(dim, segments);
    let mut work: BTreeMap<String, Vec<f64>> = states.iter().map(|(k, v)| (k.clone(), v.values().to_vec())).collect();
    let mut r = rng::stream(seed, "gossip", &[]);
    let mut log = Vec::new();
    for id in states.keys() {
        let peers: Vec<&String> = topology.neighbors(id).into_iter().flatten().filter(|p| states.contains_key(*p)).collect();
        if peers.is_empty() {
            continue;
        }
        let picks: Vec<&String> = peers.choose_multiple(&mut r, fanout.min(peers.len())).copied().collect();
        for (s, &(lo, hi)) in bounds.iter().enumerate() {
            let peer = picks[s % picks.len()];
            let mine = work[id][lo..hi].to_vec();
            let theirs = work[peer.as_str()][lo..hi].to_vec();
            let mean: Vec<f64> = mine.iter().zip(&theirs).map(|(a, b)| (a + b) / 2.0).collect();
            work.get_mut(id).expect("known")[lo..hi].copy_from_slice(&mean);
            work.get_mut(peer.as_str()).expect("known")[lo..hi].copy_from_slice(&mean);
            log.push(Exchange { initiator: id.clone(), peer: peer.clone(), start: lo, end: hi });
        }
    }
    let out = work
        .into_iter()
        .map(|(id, v)| {
            let version = states[&id].version();
            Ok((id, ParamVector::new(v, version)?))
        })
        .collect::<Result<_>>()?;
    Ok((out, log))
}

/// Alternative to symmetric gossip: a leader, chosen by seeded round-robin,
/// averages every client's state and sends the mean back to all.
pub fn rotating_leader_round(
    states: &BTreeMap<String, ParamVector>,
    round: u64,
    seed: u64,
) -> Result<(String, BTreeMap<String, ParamVector>)> {
    let ids: Vec<&String> = states.keys().collect();
    if ids.is_empty() {
        return Err(Error::Aggregation("rotating leader needs at least one client".into()));
    }
    let offset = rng::stream(seed, "leader", &[]).random_range(0..ids.len() as u64);
    let leader = ids[((offset + round) % ids.len() as u64) as usize].clone();
    let dim = states[ids[0]].dim();
    let mut mean = vec![0.0; dim];
    for s in states.values() {
        s.ensure_dim(dim)?;
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= ids.len() as f64;
    }
    let out = states
        .iter()
        .map(|(id, s)| Ok((id.clone(), ParamVector::new(mean.clone(), s.version())?)))
        .collect::<Result<_>>()?;
    Ok((leader, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn states(rows: &[Vec<f64>]) -> BTreeMap<String, ParamVector> {
        rows.iter()
            .enumerate()
            .map(|(i, v)| (format!("c{i}"), ParamVector::new(v.clone(), 0).unwrap()))
            .collect()
    }

    fn mean(s: &BTreeMap<String, ParamVector>) -> Vec<f64> {
        let dim = s.values().next().unwrap().dim();
        (0..dim).map(|j| s.values().map(|p| p.values()[j]).sum::<f64>() / s.len() as f64).collect()
    }

    fn spread(s: &BTreeMap<String, ParamVector>) -> f64 {
        let v: Vec<&ParamVector> = s.values().collect();
        let mut max: f64 = 0.0;
        for a in &v {
            for b in &v {
                max = max.max(a.distance(b));
            }
        }
        max
    }

    #[test]
    fn two_clients_meet_at_midpoint() {
        let s = states(&[vec![0.0, 2.0], vec![4.0, -2.0]]);
        let out = gossip_round(&s, &Topology::complete(ids(2)), 1, 1, 3).unwrap();
        assert_eq!(out["c0"].values(), &[2.0, 0.0]);
        assert_eq!(out["c1"].values(), &[2.0, 0.0]);
    }

    #[test]
    fn log_covers_every_segment_of_every_initiator() {
        let s = states(&[vec![0.0; 5], vec![1.0; 5], vec![2.0; 5]]);
        let (_, log) = gossip_round_logged(&s, &Topology::complete(ids(3)), 2, 3, 1).unwrap();
        assert_eq!(log.len(), 9);
        assert!(log.iter().all(|e| e.initiator != e.peer));
        let per_init: usize = log.iter().filter(|e| e.initiator == "c0").map(|e| e.end - e.start).sum();
        assert_eq!(per_init, 5);
    }

    #[test]
    fn segments_are_balanced() {
        assert_eq!(segment_bounds(10, 3), vec![(0, 4), (4, 7), (7, 10)]);
        assert_eq!(segment_bounds(4, 4), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn complete_graph_of_eight_converges() {
        let mut r = rng::stream(5, "test", &[]);
        let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..6).map(|_| rand::Rng::random_range(&mut r, -10.0..10.0)).collect()).collect();
        let mut s = states(&rows);
        let initial = spread(&s);
        let topo = Topology::complete(ids(8));
        for round in 0..200 {
            s = gossip_round(&s, &topo, 1, 1, 5 + round).unwrap();
        }
        assert!(spread(&s) < 1e-6 * initial);
    }

    #[test]
    fn ring_and_connectivity() {
        let ring = Topology::ring(ids(5));
        assert!(ring.is_connected());
        assert_eq!(ring.neighbors("c0").unwrap().len(), 2);
        let split = Topology::from_edges(ids(4), [("c0".into(), "c1".into()), ("c2".into(), "c3".into())]).unwrap();
        assert!(matches!(split.validate(), Err(Error::Topology(_))));
        assert!(Topology::from_edges(ids(2), [("c0".into(), "zz".into())]).is_err());
    }

    #[test]
    fn bad_arguments() {
        let s = states(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let t = Topology::complete(ids(2));
        assert!(gossip_round(&s, &t, 1, 3, 0).is_err());
        assert!(gossip_round(&s, &t, 0, 1, 0).is_err());
        assert!(gossip_round(&s, &Topology::complete(ids(1)), 1, 1, 0).is_err());
    }

    #[test]
    fn rotating_leader_cycles_and_averages() {
        let s = states(&[vec![0.0], vec![3.0], vec![6.0]]);
        let leaders: Vec<String> = (0..6).map(|r| rotating_leader_round(&s, r, 9).unwrap().0).collect();
        assert_eq!(leaders[0], leaders[3]);
        assert_ne!(leaders[0], leaders[1]);
        let (_, out) = rotating_leader_round(&s, 0, 9).unwrap();
        assert!(out.values().all(|p| p.values() == [3.0]));
    }

    proptest! {
        #[test]
        fn mean_is_conserved(
            rows in (2usize..10, 1usize..8).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-100f64..100.0, d), n)),
            fanout in 1usize..4,
            seg in 1usize..8,
            seed in any::<u64>(),
            ring in any::<bool>(),
        ) {
            let s = states(&rows);
            let dim = rows[0].len();
            let segments = seg.min(dim);
            let topo = if ring { Topology::ring(ids(rows.len())) } else { Topology::complete(ids(rows.len())) };
            let before = mean(&s);
            let mut cur = s;
            for round in 0..5 {
                cur = gossip_round(&cur, &topo, fanout, segments, seed.wrapping_add(round)).unwrap();
                for (a, b) in before.iter().zip(mean(&cur)) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
