use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Manhattan,
    Euclidean,
    Cosine,
}

/// Distance under `metric`. Cosine distance is `1 - cos`, with two zero
/// vectors at distance 0 and a zero vector at distance 1 from anything else.
pub fn distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Metric::Cosine => {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            match (na == 0.0, nb == 0.0) {
                (true, true) => 0.0,
                (true, false) | (false, true) => 1.0,
                _ => {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    (1.0 - dot / (na * nb)).max(0.0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub assignments: BTreeMap<String, usize>,
    pub n_clusters: usize,
    pub metric: Metric,
    /// Medoid client of each cluster, indexed by cluster.
    pub medoids: Vec<String>,
}

impl ClusterAssignment {
    /// Every client in one cluster whose medoid is the first id.
    pub fn single<I: IntoIterator<Item = String>>(ids: I, metric: Metric) -> Self {
        let assignments: BTreeMap<String, usize> = ids.into_iter().map(|id| (id, 0)).collect();
        let medoids = assignments.keys().next().cloned().into_iter().collect();
        Self { assignments, n_clusters: 1, metric, medoids }
    }

    pub fn members(&self, cluster: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, &c)| c == cluster)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn cluster_of(&self, client_id: &str) -> Option<usize> {
        self.assignments.get(client_id).copied()
    }
}

const MAX_ITERATIONS: usize = 100;

/// Deterministic k-medoids over client update vectors.
///
/// Clients are processed in lexicographic id order. The first medoid is the
/// lexicographically first client; each further medoid is the client
/// farthest from the medoids chosen so far. Non-medoid clients join the
/// nearest medoid, ties going to the lexicographically smaller medoid.
/// Cluster indices are numbered by each cluster's smallest client id.
pub fn cluster_clients(
    updates: &BTreeMap<String, ParamVector>,
    n_clusters: usize,
    metric: Metric,
) -> Result<ClusterAssignment> {
    if n_clusters == 0 {
        return Err(Error::Config("n_clusters must be >= 1".into()));
    }
    if updates.len() < n_clusters {
        return Err(Error::Config(format!(
            "{} clients cannot form {n_clusters} clusters",
            updates.len()
        )));
    }
    let ids: Vec<&String> = updates.keys().collect();
    let vectors: Vec<&[f64]> = updates.values().map(|v| v.values()).collect();
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::Shape { expected: dim, actual: v.len() });
    }
    let n = ids.len();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| distance(metric, vectors[i], vectors[j])).collect())
        .collect();

    let mut medoids = vec![0usize];
    while medoids.len() < n_clusters {
        let next = (0..n)
            .filter(|i| !medoids.contains(i))
            .map(|i| (i, medoids.iter().map(|&m| dist[i][m]).fold(f64::INFINITY, f64::min)))
            .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            })
            .expect("enough candidates")
            .0;
        medoids.push(next);
    }

    let mut labels = vec![0usize; n];
    for _ in 0..MAX_ITERATIONS {
        assign(&dist, &medoids, &mut labels);
        let mut changed = false;
        for (c, medoid) in medoids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let cost = |cand: usize| members.iter().map(|&j| dist[cand][j]).sum::<f64>();
            let current = cost(*medoid);
            let best = members
                .iter()
                .map(|&cand| (cand, cost(cand)))
                .fold((*medoid, current), |(bi, bc), (i, c)| if c < bc { (i, c) } else { (bi, bc) });
            if best.0 != *medoid {
                *medoid = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    assign(&dist, &medoids, &mut labels);

    // Canonical numbering: clusters ordered by their smallest member.
    let mut order: Vec<usize> = (0..n_clusters).collect();
    order.sort_by_key(|&c| (0..n).find(|&i| labels[i] == c).unwrap_or(usize::MAX));
    let mut relabel = vec![0; n_clusters];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let assignments = ids.iter().zip(&labels).map(|(id, &c)| ((*id).clone(), relabel[c])).collect();
    let medoids = order.iter().map(|&old| ids[medoids[old]].clone()).collect();
    Ok(ClusterAssignment { assignments, n_clusters, metric, medoids })
}

fn assign(dist: &[Vec<f64>], medoids: &[usize], labels: &mut [usize]) {
    for (i, label) in labels.iter_mut().enumerate() {
        if let Some(c) = medoids.iter().position(|&m| m == i) {
            *label = c;
            continue;
        }
        // Ties go to the medoid with the smaller index in id order.
        *label = medoids
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| dist[i][a].total_cmp(&dist[i][b]).then(a.cmp(&b)))
            .map(|(c, _)| c)
            .expect("at least one medoid");
    }
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len();
    let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(n).max(1.0);
    let max = (sum_rows + sum_cols) / 2.0;
    if max == expected {
        return if rows.len() == cols.len() && table.len() == rows.len() { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}
