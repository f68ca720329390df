//! Synthetic non-IID client data.
//!
//! Each client draws a label distribution from a symmetric Dirichlet with
//! concentration `1 / (skew + 1e-3)` and then samples its data class by
//! class. Clients can additionally be split across several "concept modes"
//! (opposite or independent generating weights) to plant a client grouping.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, ParamVector, TaskKind};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

const SKEW_EPSILON: f64 = 1e-3;
const N_CLASSES: usize = 2;

fn default_samples_per_client() -> usize {
    100
}
fn default_n_features() -> usize {
    5
}
fn default_noise_std() -> f64 {
    0.1
}
fn default_probe_samples() -> usize {
    500
}
fn default_concept_modes() -> usize {
    1
}

/// Shape of a synthetic federated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub task: TaskKind,
    pub n_clients: usize,
    #[serde(default = "default_samples_per_client")]
    pub samples_per_client: usize,
    #[serde(default = "default_n_features")]
    pub n_features: usize,
    #[serde(default)]
    pub skew: f64,
    /// Target noise for regression.
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    /// Size of the held-out IID probe set.
    #[serde(default = "default_probe_samples")]
    pub probe_samples: usize,
    /// Client `i` draws from generating weights of mode `i % concept_modes`.
    #[serde(default = "default_concept_modes")]
    pub concept_modes: usize,
    /// Per-client sample counts overriding `samples_per_client`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_sizes: Option<Vec<usize>>,
    /// Per-client class proportions overriding the Dirichlet draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_proportions: Option<Vec<Vec<f64>>>,
}

impl SyntheticSpec {
    pub fn new(task: TaskKind, n_clients: usize, skew: f64) -> Self {
        Self {
            task,
            n_clients,
            samples_per_client: default_samples_per_client(),
            n_features: default_n_features(),
            skew,
            noise_std: default_noise_std(),
            probe_samples: default_probe_samples(),
            concept_modes: default_concept_modes(),
            client_sizes: None,
            label_proportions: None,
        }
    }

    pub fn dirichlet_alpha(&self) -> f64 {
        1.0 / (self.skew + SKEW_EPSILON)
    }

    pub fn total_samples(&self) -> usize {
        match &self.client_sizes {
            Some(sizes) => sizes.iter().sum(),
            None => self.n_clients * self.samples_per_client,
        }
    }

    /// Field-path tagged problems with this spec.
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_clients == 0 {
            out.push(format!("{prefix}.n_clients: must be >= 1"));
        }
        if self.samples_per_client == 0 {
            out.push(format!("{prefix}.samples_per_client: must be >= 1"));
        }
        if self.n_features == 0 {
            out.push(format!("{prefix}.n_features: must be >= 1"));
        }
        if !(self.skew.is_finite() && self.skew >= 0.0) {
            out.push(format!("{prefix}.skew: must be finite and >= 0"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            out.push(format!("{prefix}.noise_std: must be finite and >= 0"));
        }
        if self.probe_samples == 0 {
            out.push(format!("{prefix}.probe_samples: must be >= 1"));
        }
        if self.concept_modes == 0 {
            out.push(format!("{prefix}.concept_modes: must be >= 1"));
        }
        if let Some(sizes) = &self.client_sizes {
            if sizes.len() != self.n_clients {
                out.push(format!("{prefix}.client_sizes: expected {} entries", self.n_clients));
            }
            if sizes.iter().any(|&s| s == 0) {
                out.push(format!("{prefix}.client_sizes: every client needs >= 1 sample"));
            }
        }
        if let Some(props) = &self.label_proportions {
            if props.len() != self.n_clients {
                out.push(format!(
                    "{prefix}.label_proportions: expected {} entries",
                    self.n_clients
                ));
            }
            for (i, p) in props.iter().enumerate() {
                let valid = p.len() == N_CLASSES
                    && p.iter().all(|v| v.is_finite() && *v >= 0.0)
                    && p.iter().sum::<f64>() > 0.0;
                if !valid {
                    out.push(format!(
                        "{prefix}.label_proportions[{i}]: need {N_CLASSES} non-negative weights with positive sum"
                    ));
                }
            }
        }
        out
    }
}

/// Generated client partitions plus the shared probe set.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub partitions: Vec<Dataset>,
    /// Held-out IID data from mode 0, never used for training.
    pub probe: Dataset,
    /// Generating parameters (weights then bias) of each concept mode.
    pub concepts: Vec<ParamVector>,
    pub client_modes: Vec<usize>,
}

/// `n_clients` partitions of a default-sized synthetic task.
pub fn generate_partitions(
    n_clients: usize,
    skew: f64,
    task: TaskKind,
    seed: u64,
) -> Result<Vec<Dataset>> {
    generate_task(&SyntheticSpec::new(task, n_clients, skew), seed).map(|t| t.partitions)
}

pub fn generate_task(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticTask> {
    let problems = spec.problems("data");
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let concepts = draw_concepts(spec, seed);
    let alpha = spec.dirichlet_alpha();
    let mut partitions = Vec::with_capacity(spec.n_clients);
    let mut client_modes = Vec::with_capacity(spec.n_clients);
    for client in 0..spec.n_clients {
        let mut rng = rng::stream(seed, "partition", &[client as u64 + 1]);
        let proportions = match &spec.label_proportions {
            Some(p) => {
                let total: f64 = p[client].iter().sum();
                p[client].iter().map(|v| v / total).collect()
            }
            None if spec.skew == 0.0 => vec![1.0 / N_CLASSES as f64; N_CLASSES],
            None => sample_dirichlet(&mut rng, alpha, N_CLASSES),
        };
        let size = spec
            .client_sizes
            .as_ref()
            .map_or(spec.samples_per_client, |s| s[client]);
        let counts = largest_remainder(&proportions, size);
        let mode = client % spec.concept_modes;
        client_modes.push(mode);
        partitions.push(sample_dataset(spec, &concepts[mode], &counts, &mut rng)?);
    }
    let mut probe_rng = rng::stream(seed, "probe", &[]);
    let probe_counts = largest_remainder(&[0.5, 0.5], spec.probe_samples);
    let probe = sample_dataset(spec, &concepts[0], &probe_counts, &mut probe_rng)?;
    Ok(SyntheticTask { partitions, probe, concepts, client_modes })
}

fn draw_concepts(spec: &SyntheticSpec, seed: u64) -> Vec<ParamVector> {
    let d = spec.n_features;
    let mut rng = rng::stream(seed, "partition", &[0]);
    let mut direction = || -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.into_iter().map(|x| x / norm).collect()
    };
    let mut out = Vec::with_capacity(spec.concept_modes);
    let base = direction();
    for mode in 0..spec.concept_modes {
        let dir = match mode {
            0 => base.clone(),
            1 => base.iter().map(|x| -x).collect(),
            _ => direction(),
        };
        // For logistic data, class means at +/- dir give log-odds 2 * dir . x.
        let mut params: Vec<f64> = dir.iter().map(|x| 2.0 * x).collect();
        let bias = match (spec.task, mode) {
            (TaskKind::BinaryLogistic, _) => 0.0,
            (TaskKind::LinearRegression, 1) => -0.5,
            (TaskKind::LinearRegression, _) => 0.5,
        };
        params.push(bias);
        out.push(ParamVector::new(params, 0).expect("finite concept"));
    }
    out
}

fn sample_dataset(
    spec: &SyntheticSpec,
    concept: &ParamVector,
    class_counts: &[usize],
    rng: &mut StreamRng,
) -> Result<Dataset> {
    let d = spec.n_features;
    let weights = &concept.values()[..d];
    let bias = concept.values()[d];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (class, &count) in class_counts.iter().enumerate() {
        for _ in 0..count {
            match spec.task {
                TaskKind::BinaryLogistic => {
                    // Class-conditional Gaussians at +/- w/2.
                    let sign = if class == 1 { 1.0 } else { -1.0 };
                    let row: Vec<f64> = weights
                        .iter()
                        .map(|w| sign * w / 2.0 + rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    rows.push(row);
                    labels.push(class as f64);
                }
                TaskKind::LinearRegression => {
                    let (row, y) = sample_regression_row(weights, bias, spec.noise_std, class, rng)?;
                    rows.push(row);
                    labels.push(y);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let features = order.iter().map(|&i| rows[i].clone()).collect();
    let labels = order.iter().map(|&i| labels[i]).collect();
    Dataset::new(spec.task, d, features, labels)
}

fn sample_regression_row(
    weights: &[f64],
    bias: f64,
    noise_std: f64,
    bucket: usize,
    rng: &mut StreamRng,
) -> Result<(Vec<f64>, f64)> {
    for _ in 0..10_000 {
        let row: Vec<f64> = weights.iter().map(|_| rng.sample(StandardNormal)).collect();
        let noise: f64 = rng.sample(StandardNormal);
        let y = row.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() + bias + noise_std * noise;
        if usize::from(y >= 0.0) == bucket {
            return Ok((row, y));
        }
    }
    Err(Error::Numeric("regression sampler could not hit the requested target bucket".into()))
}

/// Symmetric Dirichlet sample computed in log space so that tiny
/// concentrations do not underflow to an all-zero vector.
fn sample_dirichlet(rng: &mut StreamRng, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha + 1.0, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = 1.0 - rng.random::<f64>();
            g.ln() + u.ln() / alpha
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Integer counts summing to `n` closest to `n * proportions`.
fn largest_remainder(proportions: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}
