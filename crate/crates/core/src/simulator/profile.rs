use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;

/// Compute side of a simulated device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Operations per virtual millisecond.
    pub compute_capacity: f64,
    pub energy_budget: f64,
}

/// Link between a device and its aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    /// Bytes per virtual millisecond.
    pub bandwidth: f64,
    pub base_latency_ms: f64,
    pub dropout_prob: f64,
}

/// `base_latency + bytes / bandwidth`, in virtual ms.
pub fn transfer_time(bytes: u64, profile: &NetworkProfile) -> f64 {
    profile.base_latency_ms + bytes as f64 / profile.bandwidth
}

/// `ops / compute_capacity`, in virtual ms.
pub fn compute_time(ops: f64, profile: &DeviceProfile) -> f64 {
    ops / profile.compute_capacity
}

/// Operations charged for local training: `4 * n * dim * epochs`.
pub fn training_ops(n_samples: usize, dim: usize, local_epochs: u32) -> f64 {
    4.0 * n_samples as f64 * dim as f64 * f64::from(local_epochs)
}

/// Bernoulli draw from the stream salted by client and round.
pub fn sample_dropout(prob: f64, client_id: &str, round: u64, seed: u64) -> bool {
    prob > 0.0 && rng::stream(seed, "dropout", &[rng::salt_str(client_id), round]).random::<f64>() < prob
}

/// A fixed value or a uniform range sampled once per client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueSpec {
    Fixed(f64),
    Range { min: f64, max: f64 },
}

impl ValueSpec {
    fn sample(&self, r: &mut rng::StreamRng) -> f64 {
        match *self {
            ValueSpec::Fixed(v) => v,
            ValueSpec::Range { min, max } if max > min => r.random_range(min..max),
            ValueSpec::Range { min, .. } => min,
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            ValueSpec::Fixed(v) => (v, v),
            ValueSpec::Range { min, max } => (min, max),
        }
    }
}

/// Per-client overrides; unset fields fall back to the sampled defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOverride {
    pub compute_capacity: Option<f64>,
    pub bandwidth: Option<f64>,
    pub base_latency_ms: Option<f64>,
    pub dropout_prob: Option<f64>,
    pub energy_budget: Option<f64>,
}

fn default_capacity() -> ValueSpec {
    ValueSpec::Fixed(1000.0)
}
fn default_bandwidth() -> ValueSpec {
    ValueSpec::Fixed(1000.0)
}
fn default_latency() -> ValueSpec {
    ValueSpec::Fixed(10.0)
}
fn zero() -> ValueSpec {
    ValueSpec::Fixed(0.0)
}

/// How device and network profiles are assigned to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    #[serde(default = "default_capacity")]
    pub compute_capacity: ValueSpec,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: ValueSpec,
    #[serde(default = "default_latency")]
    pub base_latency_ms: ValueSpec,
    #[serde(default = "zero")]
    pub dropout_prob: ValueSpec,
    #[serde(default = "zero")]
    pub energy_budget: ValueSpec,
    #[serde(default)]
    pub overrides: BTreeMap<String, ProfileOverride>,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            compute_capacity: default_capacity(),
            bandwidth: default_bandwidth(),
            base_latency_ms: default_latency(),
            dropout_prob: zero(),
            energy_budget: zero(),
            overrides: BTreeMap::new(),
        }
    }
}

impl ProfileConfig {
    pub fn problems(&self, prefix: &str, client_ids: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        let probability = |v: f64| (0.0..1.0).contains(&v);
        let checks: [(&str, ValueSpec, &dyn Fn(f64) -> bool, &str); 5] = [
            ("compute_capacity", self.compute_capacity, &positive, "must be > 0"),
            ("bandwidth", self.bandwidth, &positive, "must be > 0"),
            ("base_latency_ms", self.base_latency_ms, &non_negative, "must be >= 0"),
            ("dropout_prob", self.dropout_prob, &probability, "must be in [0, 1)"),
            ("energy_budget", self.energy_budget, &non_negative, "must be >= 0"),
        ];
        for (name, spec, ok, msg) in checks {
            let (lo, hi) = spec.bounds();
            if !ok(lo) || !ok(hi) || lo > hi {
                out.push(format!("{prefix}.{name}: {msg}"));
            }
        }
        for (id, o) in &self.overrides {
            if !client_ids.contains(id) {
                out.push(format!("{prefix}.overrides.{id}: unknown client"));
            }
            let fields: [(&str, Option<f64>, &dyn Fn(f64) -> bool, &str); 5] = [
                ("compute_capacity", o.compute_capacity, &positive, "must be > 0"),
                ("bandwidth", o.bandwidth, &positive, "must be > 0"),
                ("base_latency_ms", o.base_latency_ms, &non_negative, "must be >= 0"),
                ("dropout_prob", o.dropout_prob, &probability, "must be in [0, 1)"),
                ("energy_budget", o.energy_budget, &non_negative, "must be >= 0"),
            ];
            for (name, v, ok, msg) in fields {
                if v.is_some_and(|v| !ok(v)) {
                    out.push(format!("{prefix}.overrides.{id}.{name}: {msg}"));
                }
            }
        }
        out
    }

    /// Profiles for one client, drawn from its own salted stream.
    pub fn resolve(&self, client_id: &str, seed: u64) -> (DeviceProfile, NetworkProfile) {
        let mut r = rng::stream(seed, "profile", &[rng::salt_str(client_id)]);
        let mut device = DeviceProfile {
            compute_capacity: self.compute_capacity.sample(&mut r),
            energy_budget: self.energy_budget.sample(&mut r),
        };
        let mut network = NetworkProfile {
            bandwidth: self.bandwidth.sample(&mut r),
            base_latency_ms: self.base_latency_ms.sample(&mut r),
            dropout_prob: self.dropout_prob.sample(&mut r),
        };
        if let Some(o) = self.overrides.get(client_id) {
            device.compute_capacity = o.compute_capacity.unwrap_or(device.compute_capacity);
            device.energy_budget = o.energy_budget.unwrap_or(device.energy_budget);
            network.bandwidth = o.bandwidth.unwrap_or(network.bandwidth);
            network.base_latency_ms = o.base_latency_ms.unwrap_or(network.base_latency_ms);
            network.dropout_prob = o.dropout_prob.unwrap_or(network.dropout_prob);
        }
        (device, network)
    }
}
