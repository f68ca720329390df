use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::profile::ProfileConfig;
use crate::aggregation::{HierarchicalSchedule, StalenessPolicy, Topology};
use crate::client_mgmt::{Metric, SelectionCriteria, SelectionMode};
use crate::error::{Error, Result};
use crate::learning::{SyntheticSpec, TaskKind};
use crate::model_mgmt::{Scheme, TriggerState};
use crate::training_patterns::{AnchorSource, IncentiveScheme, MultiTaskPlan, MAX_SHAPLEY_CLIENTS};

pub const SCENARIO_VERSION: u32 = 1;

fn one() -> u32 {
    1
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}

/// Local training hyperparameters shared by every client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub learning_rate: f64,
    #[serde(default = "one")]
    pub local_epochs: u32,
    /// Capped at each client's sample count.
    pub batch_size: usize,
    /// Shuffle batches with a per-client, per-round seed.
    #[serde(default = "yes")]
    pub shuffle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GossipMode {
    #[default]
    Symmetric,
    RotatingLeader,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyConfig {
    #[default]
    Complete,
    Ring,
    Edges { edges: Vec<(String, String)> },
}

impl TopologyConfig {
    pub fn build(&self, ids: &[String]) -> Result<Topology> {
        let ids = ids.iter().cloned();
        match self {
            TopologyConfig::Complete => Ok(Topology::complete(ids)),
            TopologyConfig::Ring => Ok(Topology::ring(ids)),
            TopologyConfig::Edges { edges } => Topology::from_edges(ids, edges.iter().cloned()),
        }
    }
}

/// An edge server unavailable for rounds `from_round..=to_round`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeFailure {
    pub edge: String,
    pub from_round: u64,
    pub to_round: u64,
}

fn default_mix() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregatorConfig {
    #[default]
    Fedavg,
    Async {
        staleness: StalenessPolicy,
        #[serde(default = "default_mix")]
        mix: f64,
        /// Length of each round's window in virtual ms.
        round_deadline_ms: f64,
    },
    Hierarchical {
        k1: u32,
        k2: u32,
        /// Spread clients round-robin (in id order) over this many edges.
        #[serde(default)]
        n_edges: Option<usize>,
        /// Explicit edge membership instead of `n_edges`.
        #[serde(default)]
        edge_groups: Option<BTreeMap<String, BTreeSet<String>>>,
        #[serde(default)]
        edge_failures: Vec<EdgeFailure>,
    },
    Gossip {
        #[serde(default)]
        topology: TopologyConfig,
        #[serde(default = "one_usize")]
        fanout: usize,
        #[serde(default = "one_usize")]
        segments: usize,
        #[serde(default)]
        mode: GossipMode,
    },
    Secure,
}

impl AggregatorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorConfig::Fedavg => "fedavg",
            AggregatorConfig::Async { .. } => "async",
            AggregatorConfig::Hierarchical { .. } => "hierarchical",
            AggregatorConfig::Gossip { mode: GossipMode::Symmetric, .. } => "gossip",
            AggregatorConfig::Gossip { mode: GossipMode::RotatingLeader, .. } => "rotating_leader",
            AggregatorConfig::Secure => "secure",
        }
    }

    /// The hierarchical schedule with edge membership resolved.
    pub fn schedule(&self, ids: &[String]) -> Option<HierarchicalSchedule> {
        let AggregatorConfig::Hierarchical { k1, k2, n_edges, edge_groups, .. } = self else {
            return None;
        };
        let edge_groups = match (edge_groups, n_edges) {
            (Some(groups), _) => groups.clone(),
            (None, n) => {
                let n = n.unwrap_or(1).max(1);
                let mut groups: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
                for (i, id) in ids.iter().enumerate() {
                    groups.entry(format!("edge-{}", i % n)).or_default().insert(id.clone());
                }
                groups
            }
        };
        Some(HierarchicalSchedule { k1: *k1, k2: *k2, edge_groups })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub clip_norm: f64,
    #[serde(default)]
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Cluster on the update deltas of this round (1-based).
    pub after_round: u64,
    pub n_clusters: usize,
    #[serde(default = "default_metric")]
    pub metric: Metric,
}

fn default_metric() -> Metric {
    Metric::Cosine
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceConfig {
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncentiveConfig {
    pub scheme: IncentiveScheme,
    /// Reward paid out per aggregation round.
    pub budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restart {
    /// Retrain from the deployed model.
    #[default]
    Warm,
    /// Retrain from a zero model.
    Cold,
}

fn default_monitor_rounds() -> u64 {
    10
}
fn default_monitor_interval() -> f64 {
    1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerConfig {
    /// Accuracy below this (or loss above it, for regression) underperforms.
    pub threshold: f64,
    pub patience: u32,
    pub quorum_fraction: f64,
    /// Monitor the first `monitored` clients in id order; all by default.
    #[serde(default)]
    pub monitored: Option<usize>,
    #[serde(default = "default_monitor_rounds")]
    pub monitor_rounds: u64,
    #[serde(default = "default_monitor_interval")]
    pub monitor_interval_ms: f64,
    /// Flip every label (clients and probe) before this monitoring round.
    #[serde(default)]
    pub drift_at_round: Option<u64>,
    #[serde(default)]
    pub restart: Restart,
    #[serde(default = "one")]
    pub max_replacements: u32,
}

impl TriggerConfig {
    pub fn initial_state(&self) -> Result<TriggerState> {
        TriggerState::new(self.threshold, self.patience, self.quorum_fraction)
    }
}

fn default_conv_tolerance() -> f64 {
    1e-4
}
fn default_conv_window() -> u32 {
    5
}

/// Converged once the relative loss improvement stays below `tolerance`
/// for `window` consecutive evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    #[serde(default = "default_conv_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_conv_window")]
    pub window: u32,
    /// End training at convergence instead of using the full round budget.
    #[serde(default)]
    pub stop: bool,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { tolerance: default_conv_tolerance(), window: default_conv_window(), stop: false }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub rounds: u64,
    pub data: SyntheticSpec,
    pub training: TrainingSpec,
    #[serde(default)]
    pub profiles: ProfileConfig,
    #[serde(default)]
    pub selection: Option<SelectionCriteria>,
    #[serde(default)]
    pub aggregator: AggregatorConfig,
    #[serde(default)]
    pub compression: Option<Scheme>,
    #[serde(default)]
    pub dp: Option<DpConfig>,
    #[serde(default)]
    pub clustering: Option<ClusteringConfig>,
    #[serde(default)]
    pub multitask: Option<MultiTaskPlan>,
    #[serde(default)]
    pub balance: Option<BalanceConfig>,
    #[serde(default)]
    pub incentive: Option<IncentiveConfig>,
    #[serde(default)]
    pub trigger: Option<TriggerConfig>,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
}

/// Zero-padded ids so lexicographic order matches numeric order.
pub fn client_ids(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(3);
    (0..n).map(|i| format!("client-{i:0width$}")).collect()
}

impl Scenario {
    /// A minimal FedAvg scenario, handy as a starting point in code.
    pub fn minimal(task: TaskKind, n_clients: usize, rounds: u64, seed: u64) -> Self {
        Self {
            version: SCENARIO_VERSION,
            name: String::new(),
            seed,
            rounds,
            data: SyntheticSpec::new(task, n_clients, 0.0),
            training: TrainingSpec { learning_rate: 0.1, local_epochs: 1, batch_size: 20, shuffle: true },
            profiles: ProfileConfig::default(),
            selection: None,
            aggregator: AggregatorConfig::Fedavg,
            compression: None,
            dp: None,
            clustering: None,
            multitask: None,
            balance: None,
            incentive: None,
            trigger: None,
            convergence: ConvergenceConfig::default(),
        }
    }

    /// Parse JSON. Unknown keys are rejected; errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Decode(format!("scenario: {e}")))
    }

    pub fn client_ids(&self) -> Vec<String> {
        client_ids(self.data.n_clients)
    }

    pub fn model_dim(&self) -> usize {
        self.data.n_features + 1
    }

    pub fn selection_criteria(&self) -> SelectionCriteria {
        self.selection.clone().unwrap_or_else(|| SelectionCriteria::new(SelectionMode::Random, usize::MAX))
    }

    /// Every problem, each prefixed with the path of the offending field.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let ids = self.client_ids();
        let n = self.data.n_clients;
        let dim = self.model_dim();
        let agg = &self.aggregator;

        if self.version != SCENARIO_VERSION {
            p.push(format!("version: expected {SCENARIO_VERSION}, got {}", self.version));
        }
        p.extend(self.data.problems("data"));

        let t = &self.training;
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            p.push("training.learning_rate: must be > 0".into());
        }
        if t.local_epochs == 0 {
            p.push("training.local_epochs: must be >= 1".into());
        }
        if t.batch_size == 0 {
            p.push("training.batch_size: must be >= 1".into());
        }

        p.extend(self.profiles.problems("profiles", &ids));
        if let Some(sel) = &self.selection {
            if let Err(e) = sel.validate() {
                p.push(format!("selection: {}", plain(&e)));
            }
        }

        match agg {
            AggregatorConfig::Fedavg | AggregatorConfig::Secure => {}
            AggregatorConfig::Async { staleness, mix, round_deadline_ms } => {
                if let Err(e) = staleness.validate() {
                    p.push(format!("aggregator.staleness: {}", plain(&e)));
                }
                if !(*mix > 0.0 && *mix <= 1.0) {
                    p.push("aggregator.mix: must be in (0, 1]".into());
                }
                if !(round_deadline_ms.is_finite() && *round_deadline_ms > 0.0) {
                    p.push("aggregator.round_deadline_ms: must be > 0".into());
                }
            }
            AggregatorConfig::Hierarchical { n_edges, edge_groups, edge_failures, .. } => {
                if n_edges.is_some() && edge_groups.is_some() {
                    p.push("aggregator: set n_edges or edge_groups, not both".into());
                }
                if n_edges.is_some_and(|e| e == 0 || e > n) {
                    p.push(format!("aggregator.n_edges: must be in 1..={n}"));
                }
                if let Some(schedule) = agg.schedule(&ids) {
                    let known: BTreeSet<String> = ids.iter().cloned().collect();
                    if let Err(e) = schedule.validate(Some(&known)) {
                        p.push(format!("aggregator.edge_groups: {}", plain(&e)));
                    }
                    for (i, f) in edge_failures.iter().enumerate() {
                        if !schedule.edge_groups.contains_key(&f.edge) {
                            p.push(format!("aggregator.edge_failures[{i}].edge: unknown edge {}", f.edge));
                        }
                        if f.from_round > f.to_round {
                            p.push(format!("aggregator.edge_failures[{i}]: from_round after to_round"));
                        }
                    }
                }
            }
            AggregatorConfig::Gossip { topology, fanout, segments, .. } => {
                match topology.build(&ids) {
                    Ok(t) if !t.is_connected() => p.push("aggregator.topology: gossip topology is not connected".into()),
                    Ok(_) => {}
                    Err(e) => p.push(format!("aggregator.topology: {}", plain(&e))),
                }
                if *fanout == 0 {
                    p.push("aggregator.fanout: must be >= 1".into());
                }
                if *segments == 0 || *segments > dim {
                    p.push(format!("aggregator.segments: must be in 1..={dim}"));
                }
            }
        }

        if let Some(scheme) = self.compression {
            match scheme {
                Scheme::None => {}
                Scheme::Topk { k } if k == 0 || k as usize > dim => {
                    p.push(format!("compression.k: must be in 1..={dim}"))
                }
                Scheme::Quantize { bits } if ![4, 8, 16].contains(&bits) => {
                    p.push("compression.bits: must be 4, 8 or 16".into())
                }
                _ => {}
            }
            if scheme != Scheme::None && matches!(agg, AggregatorConfig::Secure | AggregatorConfig::Gossip { .. }) {
                p.push(format!("compression: not supported with the {} aggregator", agg.name()));
            }
        }

        if let Some(dp) = self.dp {
            if !(dp.clip_norm.is_finite() && dp.clip_norm > 0.0) {
                p.push("dp.clip_norm: must be > 0".into());
            }
            if !(dp.sigma.is_finite() && dp.sigma >= 0.0) {
                p.push("dp.sigma: must be >= 0".into());
            }
        }

        if let Some(c) = self.clustering {
            if c.n_clusters == 0 || c.n_clusters > n {
                p.push(format!("clustering.n_clusters: must be in 1..={n}"));
            }
            if c.after_round == 0 || c.after_round > self.rounds {
                p.push(format!("clustering.after_round: must be in 1..={}", self.rounds));
            }
            if !matches!(agg, AggregatorConfig::Fedavg) {
                p.push("clustering: only supported with the fedavg aggregator".into());
            }
        }

        if let Some(m) = &self.multitask {
            if !(m.lambda.is_finite() && m.lambda >= 0.0) {
                p.push("multitask.lambda: must be finite and >= 0".into());
            }
            if m.anchor_source == AnchorSource::ClusterMean && self.clustering.is_none() {
                p.push("multitask.anchor_source: cluster_mean requires clustering".into());
            }
        }

        if let Some(b) = self.balance {
            if !(b.tolerance.is_finite() && b.tolerance >= 1.0) {
                p.push("balance.tolerance: must be >= 1".into());
            }
        }

        if let Some(inc) = self.incentive {
            if !(inc.budget.is_finite() && inc.budget >= 0.0) {
                p.push("incentive.budget: must be >= 0".into());
            }
            match agg {
                AggregatorConfig::Fedavg => {}
                AggregatorConfig::Secure if inc.scheme == IncentiveScheme::DataVolume => {}
                AggregatorConfig::Secure => p.push(
                    "incentive.scheme: the secure aggregator only sees sample counts; use data_volume".into(),
                ),
                other => p.push(format!("incentive: not supported with the {} aggregator", other.name())),
            }
            if self.clustering.is_some() {
                p.push("incentive: not supported together with clustering".into());
            }
            let max_participants = self.selection_criteria().top_k.min(n);
            if inc.scheme == IncentiveScheme::Shapley && max_participants > MAX_SHAPLEY_CLIENTS {
                p.push(format!(
                    "incentive.scheme: shapley needs at most {MAX_SHAPLEY_CLIENTS} participants per round, selection allows {max_participants}"
                ));
            }
        }

        if let Some(tr) = &self.trigger {
            if let Err(e) = tr.initial_state() {
                p.push(format!("trigger: {}", plain(&e)));
            }
            if tr.monitored.is_some_and(|m| m == 0 || m > n) {
                p.push(format!("trigger.monitored: must be in 1..={n}"));
            }
            if tr.monitor_rounds == 0 {
                p.push("trigger.monitor_rounds: must be >= 1".into());
            }
            if !(tr.monitor_interval_ms.is_finite() && tr.monitor_interval_ms > 0.0) {
                p.push("trigger.monitor_interval_ms: must be > 0".into());
            }
            if tr.drift_at_round.is_some_and(|d| d == 0 || d > tr.monitor_rounds) {
                p.push(format!("trigger.drift_at_round: must be in 1..={}", tr.monitor_rounds));
            }
            if matches!(agg, AggregatorConfig::Gossip { .. }) {
                p.push("trigger: not supported with gossip aggregation".into());
            }
        }

        let c = self.convergence;
        if !(c.tolerance.is_finite() && c.tolerance > 0.0) {
            p.push("convergence.tolerance: must be > 0".into());
        }
        if c.window == 0 {
            p.push("convergence.window: must be >= 1".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Error text without the variant prefix, for nesting under a field path.
fn plain(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Topology(m) | Error::Parameter(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Scenario {
        Scenario::minimal(TaskKind::BinaryLogistic, 4, 3, 1)
    }

    #[test]
    fn minimal_is_valid_and_roundtrips() {
        let s = base();
        s.validate().unwrap();
        let text = serde_json::to_string_pretty(&s).unwrap();
        assert_eq!(Scenario::from_json(&text).unwrap(), s);
    }

    #[test]
    fn unknown_keys_are_parse_errors_with_position() {
        let text = "{\n  \"version\": 1,\n  \"seed\": 1,\n  \"roundz\": 3\n}";
        let err = Scenario::from_json(text).unwrap_err().to_string();
        assert!(err.contains("roundz") && err.contains("line 4"), "{err}");
    }

    #[test]
    fn aggregator_configs_parse() {
        let text = r#"{"version":1,"seed":1,"rounds":2,
            "data":{"task":"binary_logistic","n_clients":4},
            "training":{"learning_rate":0.1,"batch_size":10},
            "aggregator":{"kind":"hierarchical","k1":2,"k2":3,"n_edges":2}}"#;
        let s = Scenario::from_json(text).unwrap();
        s.validate().unwrap();
        let sched = s.aggregator.schedule(&s.client_ids()).unwrap();
        assert_eq!(sched.edge_groups.len(), 2);
        let gossip = r#"{"kind":"gossip","topology":{"kind":"ring"},"fanout":2}"#;
        assert!(matches!(
            serde_json::from_str::<AggregatorConfig>(gossip).unwrap(),
            AggregatorConfig::Gossip { fanout: 2, .. }
        ));
        assert_eq!(serde_json::from_str::<AggregatorConfig>(r#"{"kind":"secure"}"#).unwrap(), AggregatorConfig::Secure);
    }

    #[test]
    fn problems_carry_field_paths() {
        let mut s = base();
        s.version = 2;
        s.training.learning_rate = -1.0;
        s.aggregator = AggregatorConfig::Gossip {
            topology: TopologyConfig::Edges { edges: vec![("client-000".into(), "client-001".into())] },
            fanout: 1,
            segments: 99,
            mode: GossipMode::Symmetric,
        };
        s.compression = Some(Scheme::Topk { k: 2 });
        s.incentive = Some(IncentiveConfig { scheme: IncentiveScheme::Shapley, budget: -1.0 });
        let p = s.problems();
        for expected in [
            "version: expected 1, got 2",
            "training.learning_rate: must be > 0",
            "aggregator.topology: gossip topology is not connected",
            "aggregator.segments: must be in 1..=6",
            "compression: not supported with the gossip aggregator",
            "incentive.budget: must be >= 0",
        ] {
            assert!(p.iter().any(|x| x == expected), "missing {expected:?} in {p:?}");
        }
    }

    #[test]
    fn shapley_needs_small_rounds() {
        let mut s = Scenario::minimal(TaskKind::BinaryLogistic, 10, 3, 1);
        s.incentive = Some(IncentiveConfig { scheme: IncentiveScheme::Shapley, budget: 1.0 });
        assert!(s.validate().is_err());
        s.selection = Some(SelectionCriteria::new(SelectionMode::Random, 8));
        s.validate().unwrap();
    }

    #[test]
    fn client_ids_sort_numerically() {
        let ids = client_ids(1200);
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert_eq!(ids[0], "client-0000");
        assert_eq!(client_ids(3)[2], "client-002");
    }
}
