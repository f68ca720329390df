use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use rand::RngCore;
use serde_json::{json, Value};

use super::events::{EventKind, EventQueue, SimEvent};
use super::lifecycle::{Lifecycle, LifecycleState};
use super::metrics::{keys, MetricsRecord, Summary};
use super::profile::{compute_time, sample_dropout, training_ops, transfer_time, DeviceProfile, NetworkProfile};
use super::scenario::{AggregatorConfig, GossipMode, Restart, Scenario};
use crate::aggregation::{
    async_aggregate, dp_noise, edge_aggregate, fedavg, gossip_round_logged, mask, rotating_leader_round,
    secure_sum, CadenceDriver, HierarchicalSchedule, MaskedUpdate, ModelUpdate, PairSeeds, Tier, Topology,
};
use crate::client_mgmt::{
    cluster_clients, distance, select_clients, ClientRecord, ClientRegistry, ClusterAssignment, DataSummary, Metric,
};
use crate::error::{Error, Result};
use crate::learning::{evaluate, generate_task, local_train, mean_loss, Dataset, EvalReport, ParamVector, TrainingConfig};
use crate::model_mgmt::{
    check_replacement_trigger, compress, decompress, select_deployment, sha256, CoVersionRegistry, Contribution,
    DeploymentPlan, Digest, Scheme,
};
use crate::rng;
use crate::training_patterns::{
    balance_dataset, distribute_rewards, score_contribution, BalanceReport, ClientRoundData, IncentiveScheme,
    RewardLedger,
};

/// Everything a finished run produced.
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
    pub registry: ClientRegistry,
    pub coversion: CoVersionRegistry,
    pub ledger: RewardLedger,
    pub probe: Dataset,
    /// Client data as used for training (after balancing and drift).
    pub client_data: BTreeMap<String, Dataset>,
    /// Concept mode each client's data was generated from.
    pub client_modes: BTreeMap<String, usize>,
    pub global: ParamVector,
    pub cluster_models: BTreeMap<usize, ParamVector>,
    pub assignment: ClusterAssignment,
    pub deployment: Option<DeploymentPlan>,
    pub lifecycle: Vec<LifecycleState>,
    pub balance_reports: BTreeMap<String, BalanceReport>,
}

impl std::fmt::Debug for RunOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunOutput")
            .field("summary", &self.summary)
            .field("records", &self.records.len())
            .field("global_records", &self.coversion.global_records())
            .field("ledger_entries", &self.ledger.len())
            .finish_non_exhaustive()
    }
}

/// Run a scenario to completion. Deterministic in the scenario seed.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput> {
    scenario.validate()?;
    let mut engine = Engine::new(scenario)?;
    engine.run()?;
    engine.finish()
}

struct Upload {
    update: ModelUpdate,
    start: ParamVector,
    bytes_up: u64,
    local_version: u64,
    digest: Digest,
    masked: Option<MaskedUpdate>,
}

enum Payload {
    Transfer { bytes: u64 },
    Trained { local_loss: f64 },
    Upload(Box<Upload>),
    GossipStart,
    GossipPeer { bytes: u64 },
    Aggregate,
    Evaluate,
}

#[derive(Default)]
struct Convergence {
    prev: Option<f64>,
    streak: u32,
    converged_at: Option<u64>,
}

impl Convergence {
    /// Returns true on the evaluation that first meets the criterion.
    fn observe(&mut self, loss: f64, round: u64, tolerance: f64, window: u32) -> bool {
        if let Some(prev) = self.prev {
            let rel = (prev - loss) / prev.abs().max(1e-12);
            self.streak = if rel < tolerance { self.streak + 1 } else { 0 };
        }
        self.prev = Some(loss);
        if self.converged_at.is_none() && self.streak >= window {
            self.converged_at = Some(round);
            return true;
        }
        false
    }
}

struct Engine<'a> {
    s: &'a Scenario,
    seed: u64,
    ids: Vec<String>,
    dim: usize,
    data: BTreeMap<String, Dataset>,
    client_modes: BTreeMap<String, usize>,
    probe: Dataset,
    profiles: BTreeMap<String, (DeviceProfile, NetworkProfile)>,
    registry: ClientRegistry,
    coversion: CoVersionRegistry,
    ledger: RewardLedger,
    balance_reports: BTreeMap<String, BalanceReport>,
    balance_skipped: usize,

    queue: EventQueue<Payload>,
    clock: f64,
    records: Vec<MetricsRecord>,
    lifecycle: Lifecycle,
    last_eval: EvalReport,
    round: u64,
    version: u64,
    local_versions: BTreeMap<String, u64>,

    global: ParamVector,
    assignment: ClusterAssignment,
    cluster_models: BTreeMap<usize, ParamVector>,
    clustered: bool,
    deployment: Option<DeploymentPlan>,

    // Per-round scratch.
    active: Vec<String>,
    pending: Vec<Upload>,
    tier: Tier,
    applied: Vec<Contribution>,

    // Decentralised and hierarchical state.
    local: BTreeMap<String, ParamVector>,
    needs_download: BTreeSet<String>,
    topology: Option<Topology>,
    schedule: Option<HierarchicalSchedule>,
    cadence: Option<CadenceDriver>,
    frozen: Vec<String>,
    period_contributions: BTreeMap<String, Contribution>,
    period_order: Vec<String>,
    edge_versions: BTreeMap<String, u64>,

    // Asynchronous state.
    busy: BTreeSet<String>,

    convergence: Convergence,
}

impl<'a> Engine<'a> {
    fn new(s: &'a Scenario) -> Result<Self> {
        let seed = s.seed;
        let ids = s.client_ids();
        let dim = s.model_dim();
        let task = generate_task(&s.data, seed)?;
        let mut data: BTreeMap<String, Dataset> = ids.iter().cloned().zip(task.partitions).collect();
        let client_modes = ids.iter().cloned().zip(task.client_modes).collect();

        let mut balance_reports = BTreeMap::new();
        let mut balance_skipped = 0;
        if let Some(b) = s.balance {
            for (id, d) in data.iter_mut() {
                if d.class_histogram().len() < 2 {
                    balance_skipped += 1;
                    continue;
                }
                let (balanced, report) = balance_dataset(d, b.tolerance, stream_u64(seed, "balance", id, 0))?;
                *d = balanced;
                balance_reports.insert(id.clone(), report);
            }
        }

        let registry = ClientRegistry::new();
        let mut profiles = BTreeMap::new();
        for id in &ids {
            let (device, network) = s.profiles.resolve(id, seed);
            let mut record = ClientRecord::new(
                id.clone(),
                device.compute_capacity,
                network.bandwidth,
                DataSummary::of(&data[id]),
            );
            record.energy_budget = device.energy_budget;
            registry.register_client(record)?;
            profiles.insert(id.clone(), (device, network));
        }

        let zero = ParamVector::zeros(dim);
        let topology = match &s.aggregator {
            AggregatorConfig::Gossip { topology, .. } => Some(topology.build(&ids)?),
            _ => None,
        };
        let schedule = s.aggregator.schedule(&ids);
        let cadence = schedule.as_ref().map(CadenceDriver::new).transpose()?;
        let last_eval = evaluate(&zero, &task.probe)?;
        Ok(Self {
            s,
            seed,
            dim,
            data,
            client_modes,
            probe: task.probe,
            profiles,
            registry,
            coversion: CoVersionRegistry::new(),
            ledger: RewardLedger::new(),
            balance_reports,
            balance_skipped,
            queue: EventQueue::new(),
            clock: 0.0,
            records: Vec::new(),
            lifecycle: Lifecycle::new(),
            last_eval,
            round: 0,
            version: 0,
            local_versions: ids.iter().map(|id| (id.clone(), 0)).collect(),
            global: zero.clone(),
            assignment: ClusterAssignment::single(ids.iter().cloned(), Metric::Cosine),
            cluster_models: BTreeMap::from([(0, zero.clone())]),
            clustered: false,
            deployment: None,
            active: Vec::new(),
            pending: Vec::new(),
            tier: Tier::Central,
            applied: Vec::new(),
            local: ids.iter().map(|id| (id.clone(), zero.clone())).collect(),
            needs_download: ids.iter().cloned().collect(),
            topology,
            schedule,
            cadence,
            frozen: Vec::new(),
            period_contributions: BTreeMap::new(),
            period_order: Vec::new(),
            edge_versions: BTreeMap::new(),
            busy: BTreeSet::new(),
            convergence: Convergence::default(),
            ids,
        })
    }

    fn aggregator_name(&self) -> &'static str {
        self.s.aggregator.name()
    }

    // ---- metrics -------------------------------------------------------

    fn emit(&mut self, time: f64, kind: EventKind, subject: &str) -> Result<&mut MetricsRecord> {
        if !time.is_finite() || time < self.clock {
            return Err(Error::Invariant(format!(
                "virtual clock would move backwards from {} to {time} at {}",
                self.clock,
                kind.name()
            )));
        }
        self.clock = time;
        let record = MetricsRecord {
            seq: self.records.len() as u64,
            round: self.round,
            virtual_time_ms: time,
            event: kind.name().to_string(),
            subject: subject.to_string(),
            global_loss: self.last_eval.loss,
            global_accuracy: self.last_eval.accuracy,
            bytes_up: 0,
            bytes_down: 0,
            participants: 0,
            dropouts: 0,
            aggregator: self.aggregator_name().to_string(),
            extra: BTreeMap::new(),
        };
        self.records.push(record);
        Ok(self.records.last_mut().expect("just pushed"))
    }

    // ---- top level -----------------------------------------------------

    fn run(&mut self) -> Result<()> {
        info!("running scenario {:?} with {} clients, {} rounds", self.s.name, self.ids.len(), self.s.rounds);
        let mut replacements = 0u32;
        let mut drift_pending = self.s.trigger.and_then(|t| t.drift_at_round);
        self.task_created(None)?;
        loop {
            self.training_phase()?;
            if self.version == 0 {
                break;
            }
            self.deploy()?;
            let Some(trigger) = self.s.trigger else {
                break;
            };
            let fired = self.monitor(&mut drift_pending)?;
            if !fired || replacements >= trigger.max_replacements {
                break;
            }
            replacements += 1;
            self.lifecycle.advance(LifecycleState::Replaced)?;
            if trigger.restart == Restart::Cold {
                let zero = ParamVector::zeros(self.dim);
                for m in self.cluster_models.values_mut() {
                    *m = zero.clone();
                }
                self.global = zero.clone();
                for l in self.local.values_mut() {
                    *l = zero.clone();
                }
            }
            self.needs_download = self.ids.iter().cloned().collect();
            self.convergence = Convergence::default();
            self.task_created(Some((replacements, trigger.restart)))?;
        }
        Ok(())
    }

    fn task_created(&mut self, replacement: Option<(u32, Restart)>) -> Result<()> {
        if replacement.is_some() {
            self.lifecycle.advance(LifecycleState::TaskCreated)?;
        }
        let n_clients = self.ids.len();
        let skipped = self.balance_skipped;
        let balanced = self.balance_reports.len();
        let time = self.clock;
        let r = self.emit(time, EventKind::TaskCreated, "server")?;
        r.participants = n_clients;
        if let Some((n, restart)) = replacement {
            r.extra.insert("replacement".into(), json!(n));
            r.extra.insert("restart".into(), json!(restart));
        } else if skipped + balanced > 0 {
            r.extra.insert("balanced_clients".into(), json!(balanced));
            r.extra.insert("balance_skipped".into(), json!(skipped));
        }
        self.lifecycle.advance(LifecycleState::Broadcast)?;
        let r = self.emit(time, EventKind::Broadcast, "server")?;
        r.participants = n_clients;
        r.extra.insert("task".into(), json!(true));
        Ok(())
    }

    fn training_phase(&mut self) -> Result<()> {
        let phase_start = self.clock;
        for r in 0..self.s.rounds {
            self.round += 1;
            match &self.s.aggregator {
                AggregatorConfig::Async { round_deadline_ms, .. } => {
                    let start = phase_start + r as f64 * round_deadline_ms;
                    self.async_round(start, start + round_deadline_ms)?;
                }
                AggregatorConfig::Hierarchical { .. } => self.hierarchical_round()?,
                AggregatorConfig::Gossip { .. } => self.gossip_round()?,
                AggregatorConfig::Fedavg | AggregatorConfig::Secure => self.sync_round()?,
            }
            if self.s.convergence.stop && self.convergence.converged_at.is_some() {
                break;
            }
        }
        // In-flight asynchronous work past the last round is abandoned.
        let abandoned = self.queue.len();
        while self.queue.pop().is_some() {}
        if abandoned > 0 {
            debug!("discarded {abandoned} in-flight events at end of training");
        }
        self.busy.clear();
        Ok(())
    }

    // ---- selection -----------------------------------------------------

    /// Select and sample dropouts; emits the round's broadcast record.
    /// Returns the active clients.
    fn select_round(&mut self, time: f64, candidates: Option<Vec<String>>) -> Result<(Vec<String>, Vec<String>)> {
        for id in &self.ids {
            self.registry.set_online(id, !self.busy.contains(id))?;
        }
        let selected = match candidates {
            Some(c) => c,
            None => select_clients(&self.registry, &self.s.selection_criteria(), self.round, self.seed)?,
        };
        let mut active = Vec::new();
        let mut dropped = 0;
        for id in &selected {
            if sample_dropout(self.profiles[id].1.dropout_prob, id, self.round, self.seed) {
                self.registry.set_online(id, false)?;
                dropped += 1;
            } else {
                active.push(id.clone());
            }
        }
        let r = self.emit(time, EventKind::Broadcast, "server")?;
        r.participants = active.len();
        r.dropouts = dropped;
        r.extra.insert("selected".into(), json!(selected.len()));
        Ok((selected, active))
    }

    fn skip_round(&mut self, time: f64) -> Result<()> {
        self.emit(time, EventKind::RoundSkipped, "server")?;
        Ok(())
    }

    // ---- local training ------------------------------------------------

    fn train_config(&self, id: &str, n: usize) -> TrainingConfig {
        let t = &self.s.training;
        let mut cfg = TrainingConfig::new(t.learning_rate, t.local_epochs, t.batch_size.min(n));
        if t.shuffle {
            cfg.shuffle_seed = Some(stream_u64(self.seed, "training", id, self.round));
        }
        match &self.s.multitask {
            Some(plan) => plan.apply(&cfg),
            None => cfg,
        }
    }

    fn cluster_model_of(&self, id: &str) -> &ParamVector {
        let c = self.assignment.cluster_of(id).unwrap_or(0);
        &self.cluster_models[&c]
    }

    /// Train one client from `start` and prepare what it uploads.
    fn train_client(&mut self, id: &str, start: &ParamVector) -> Result<(Upload, f64)> {
        let data = &self.data[id];
        let cfg = self.train_config(id, data.n_samples());
        let anchor = self.s.multitask.as_ref().and_then(|p| p.anchor(&self.global, Some(self.cluster_model_of(id))));
        let trained = local_train(start, data, &cfg, anchor)?;
        let local_loss = mean_loss(&trained, data)?;
        let n = data.n_samples();
        self.registry.record_performance(id, self.round, local_loss)?;
        let local_version = {
            let v = self.local_versions.get_mut(id).expect("known client");
            *v += 1;
            *v
        };

        let mut delta = trained.delta(start)?;
        if let Some(dp) = self.s.dp {
            delta = dp_noise(&delta, dp.clip_norm, dp.sigma, stream_u64(self.seed, "dp", id, self.round))?;
        }
        let scheme = self.s.compression.unwrap_or(Scheme::None);
        let packed = compress(&delta, scheme)?;
        let received = decompress(&packed)?;
        let params = ParamVector::new(
            start.values().iter().zip(received.values()).map(|(s, d)| s + d).collect(),
            start.version(),
        )?;
        let digest = params.digest();
        let update = ModelUpdate::new(id, start.version(), params, n)?;
        Ok((
            Upload { update, start: start.clone(), bytes_up: packed.compressed_bytes(), local_version, digest, masked: None },
            local_loss,
        ))
    }

    fn ops(&self, id: &str) -> f64 {
        training_ops(self.data[id].n_samples(), self.dim, self.s.training.local_epochs)
    }

    /// Schedule download, training and (optionally) upload for one client.
    /// Returns the completion time of the last scheduled event.
    fn schedule_client(&mut self, id: &str, start_time: f64, download: bool, upload: Option<Upload>, local_loss: f64) -> f64 {
        let (device, network) = self.profiles[id];
        let mut t = start_time;
        if download {
            let bytes = 8 * self.dim as u64;
            t += transfer_time(bytes, &network);
            self.queue.push(t, EventKind::BroadcastDone, id, Payload::Transfer { bytes });
        }
        t += compute_time(self.ops(id), &device);
        self.queue.push(t, EventKind::TrainDone, id, Payload::Trained { local_loss });
        if let Some(u) = upload {
            t += transfer_time(u.bytes_up, &network);
            self.queue.push(t, EventKind::UploadDone, id, Payload::Upload(Box::new(u)));
        }
        t
    }

    // ---- synchronous rounds (fedavg, secure) ----------------------------

    fn sync_round(&mut self) -> Result<()> {
        let start = self.clock;
        let (_, active) = self.select_round(start, None)?;
        if active.is_empty() {
            return self.skip_round(start);
        }
        self.lifecycle.advance(LifecycleState::Broadcast)?;
        let mut uploads = Vec::with_capacity(active.len());
        for id in &active {
            let from = self.cluster_model_of(id).clone();
            uploads.push((id.clone(), self.train_client(id, &from)?));
        }
        if matches!(self.s.aggregator, AggregatorConfig::Secure) {
            let session = rng::stream(self.seed, "secure", &[self.round]).next_u64();
            let seeds = PairSeeds::derive(session, &active);
            for (_, (u, _)) in uploads.iter_mut() {
                let scaled: Vec<f64> = u.update.params.values().iter().map(|v| v * u.update.n_samples as f64).collect();
                let plain = ModelUpdate::new(u.update.client_id.clone(), u.update.origin_round, ParamVector::new(scaled, 0)?, u.update.n_samples)?;
                let masked = mask(&plain, &active, &seeds)?;
                u.bytes_up = masked.payload_bytes();
                u.digest = sha256(&masked.to_bytes());
                u.masked = Some(masked);
            }
        }
        let mut end = start;
        for (id, (upload, loss)) in uploads {
            end = end.max(self.schedule_client(&id, start, true, Some(upload), loss));
        }
        self.active = active;
        self.queue.push(end, EventKind::Aggregate, "server", Payload::Aggregate);
        self.drain(None)
    }

    fn aggregate_sync(&mut self, time: f64) -> Result<()> {
        let uploads = std::mem::take(&mut self.pending);
        if let Some(c) = self.s.clustering {
            if !self.clustered && self.round >= c.after_round {
                self.cluster_now(&uploads, c.n_clusters, c.metric)?;
            }
        }
        let mut groups: BTreeMap<usize, Vec<&Upload>> = BTreeMap::new();
        for u in &uploads {
            groups.entry(self.assignment.cluster_of(&u.update.client_id).unwrap_or(0)).or_default().push(u);
        }
        let previous_global = self.global.clone();
        for (cluster, ups) in &groups {
            let model = if matches!(self.s.aggregator, AggregatorConfig::Secure) {
                let masked: Vec<MaskedUpdate> = ups.iter().filter_map(|u| u.masked.clone()).collect();
                let sum = secure_sum(&masked)?;
                let total: f64 = ups.iter().map(|u| u.update.n_samples as f64).sum();
                ParamVector::new(sum.values().iter().map(|v| v / total).collect(), 0)?
            } else {
                fedavg(&ups.iter().map(|u| u.update.clone()).collect::<Vec<_>>())?
            };
            let contributions = ups.iter().map(|u| contribution(u)).collect();
            let model = self.record_global(model, contributions)?;
            self.cluster_models.insert(*cluster, model);
            let subject = if self.clustered { format!("cluster-{cluster}") } else { "server".to_string() };
            let version = self.version;
            let r = self.emit(time, EventKind::Aggregate, &subject)?;
            r.participants = ups.len();
            r.extra.insert(keys::GLOBAL_VERSION.into(), json!(version));
            r.extra.insert(keys::CONTRIBUTORS.into(), json!(ups.len()));
        }
        self.lifecycle.advance(LifecycleState::Aggregated)?;
        self.refresh_global()?;
        if let Some(inc) = self.s.incentive {
            self.pay_rewards(time, &uploads, &previous_global, inc.scheme, inc.budget)?;
        }
        self.queue.push(time, EventKind::Evaluate, "server", Payload::Evaluate);
        Ok(())
    }

    /// Append a co-version record for `model` and return it tagged with
    /// its new global version.
    fn record_global(&mut self, model: ParamVector, contributions: Vec<Contribution>) -> Result<ParamVector> {
        self.version += 1;
        let model = model.with_version(self.version);
        let parent = self.coversion.head_digest();
        self.coversion.record_co_version(self.version, model.digest(), contributions, parent)?;
        Ok(model)
    }

    /// The shared model: sample-weighted mean of the cluster models.
    fn refresh_global(&mut self) -> Result<()> {
        if self.cluster_models.len() == 1 {
            self.global = self.cluster_models[&0].clone();
            return Ok(());
        }
        let mut weighted = Vec::new();
        for (c, m) in &self.cluster_models {
            let n: usize = self.assignment.members(*c).iter().map(|id| self.data[id].n_samples()).sum();
            weighted.push(ModelUpdate::new(format!("cluster-{c}"), 0, m.clone(), n.max(1))?);
        }
        self.global = fedavg(&weighted)?.with_version(self.version);
        Ok(())
    }

    fn cluster_now(&mut self, uploads: &[Upload], k: usize, metric: Metric) -> Result<()> {
        let deltas: BTreeMap<String, ParamVector> = uploads
            .iter()
            .map(|u| Ok((u.update.client_id.clone(), u.update.params.delta(&u.start)?)))
            .collect::<Result<_>>()?;
        if deltas.len() < k {
            debug!("round {}: only {} updates, postponing clustering", self.round, deltas.len());
            return Ok(());
        }
        let mut assignment = cluster_clients(&deltas, k, metric)?;
        let medoids: Vec<ParamVector> = assignment.medoids.iter().map(|m| deltas[m].clone()).collect();
        // Clients without an update this round are matched to the nearest
        // medoid using a probe update trained from the current model.
        let base = self.global.clone();
        for id in self.ids.clone() {
            if assignment.assignments.contains_key(&id) {
                continue;
            }
            let cfg = self.train_config(&id, self.data[&id].n_samples());
            let probe_delta = local_train(&base, &self.data[&id], &cfg, None)?.delta(&base)?;
            let nearest = medoids
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    distance(metric, probe_delta.values(), a.1.values())
                        .total_cmp(&distance(metric, probe_delta.values(), b.1.values()))
                        .then(a.0.cmp(&b.0))
                })
                .map_or(0, |(c, _)| c);
            assignment.assignments.insert(id, nearest);
        }
        info!("round {}: clustered clients into {k} groups", self.round);
        self.cluster_models = (0..assignment.n_clusters).map(|c| (c, base.clone())).collect();
        self.assignment = assignment;
        self.clustered = true;
        Ok(())
    }

    fn pay_rewards(
        &mut self,
        time: f64,
        uploads: &[Upload],
        previous: &ParamVector,
        scheme: IncentiveScheme,
        budget: f64,
    ) -> Result<()> {
        let probe = &self.probe;
        let probe_loss = |ups: &[ModelUpdate]| -> Result<f64> {
            if ups.is_empty() {
                mean_loss(previous, probe)
            } else {
                mean_loss(&fedavg(ups)?, probe)
            }
        };
        let all: Vec<ModelUpdate> = uploads.iter().map(|u| u.update.clone()).collect();
        let loss_with = if scheme == IncentiveScheme::DataVolume { 0.0 } else { probe_loss(&all)? };
        let mut round_data = BTreeMap::new();
        for u in &all {
            let loss_without = if scheme == IncentiveScheme::LossImprovement {
                let rest: Vec<ModelUpdate> = all.iter().filter(|o| o.client_id != u.client_id).cloned().collect();
                probe_loss(&rest)?
            } else {
                0.0
            };
            round_data.insert(u.client_id.clone(), ClientRoundData { n_samples: u.n_samples, loss_with, loss_without });
        }
        let by_id: BTreeMap<&str, &ModelUpdate> = all.iter().map(|u| (u.client_id.as_str(), u)).collect();
        let value = |coalition: &[&str]| -> f64 {
            let ups: Vec<ModelUpdate> = coalition.iter().map(|id| by_id[id].clone()).collect();
            probe_loss(&ups).map_or(f64::NEG_INFINITY, |l| -l)
        };
        let raw = score_contribution(scheme, &round_data, Some(&value))?;
        if raw.values().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite contribution score".into()));
        }
        let scores: BTreeMap<String, f64> = raw.iter().map(|(k, v)| (k.clone(), v.max(0.0))).collect();
        let entries = distribute_rewards(&scores, budget, self.round, scheme, &self.ledger)?;
        for e in entries {
            let raw_score = raw[&e.body.client_id];
            let r = self.emit(time, EventKind::Reward, &e.body.client_id)?;
            r.extra.insert("scheme".into(), json!(scheme));
            r.extra.insert("score".into(), json!(raw_score));
            r.extra.insert(keys::REWARD.into(), json!(e.body.reward));
        }
        Ok(())
    }

    // ---- asynchronous rounds -------------------------------------------

    fn async_round(&mut self, start: f64, end: f64) -> Result<()> {
        // Everything due before this window has already been handled.
        let (_, active) = self.select_round(start, None)?;
        self.lifecycle.advance(LifecycleState::Broadcast)?;
        let from = self.global.clone();
        for id in &active {
            let (mut upload, loss) = self.train_client(id, &from)?;
            upload.update.origin_round = self.round;
            self.busy.insert(id.clone());
            self.schedule_client(id, start, true, Some(upload), loss);
        }
        self.active = active;
        let marker = self.queue.push(end, EventKind::Evaluate, "server", Payload::Evaluate);
        self.drain(Some(marker))
    }

    fn apply_async(&mut self, time: f64, upload: Upload) -> Result<()> {
        let AggregatorConfig::Async { staleness, mix, .. } = &self.s.aggregator else {
            unreachable!("only called for async runs")
        };
        let id = upload.update.client_id.clone();
        let tau = self.round - upload.update.origin_round;
        let alpha = mix * staleness.weight(tau);
        self.global = async_aggregate(&self.global, &upload.update, self.round, staleness, *mix)?
            .with_version(self.global.version());
        self.cluster_models.insert(0, self.global.clone());
        self.busy.remove(&id);
        self.applied.push(contribution(&upload));
        let r = self.emit(time, EventKind::Aggregate, &id)?;
        r.participants = 1;
        r.extra.insert(keys::STALENESS.into(), json!(tau));
        r.extra.insert("alpha".into(), json!(alpha));
        self.lifecycle.advance(LifecycleState::Aggregated)
    }

    // ---- hierarchical rounds -------------------------------------------

    fn hierarchical_round(&mut self) -> Result<()> {
        let start = self.clock;
        let cadence = self.cadence.as_ref().expect("hierarchical runs have a cadence");
        let schedule = self.schedule.clone().expect("hierarchical runs have a schedule");
        let new_period = cadence.local_updates() % schedule.central_period() == 0;
        let candidates = if new_period {
            None
        } else {
            Some(self.frozen.clone())
        };
        let (selected, mut active) = self.select_round(start, candidates)?;
        if new_period {
            // Membership is fixed until the next central aggregation.
            self.frozen = selected;
        }
        let failed = self.failed_edges();
        let cut_off = active.len();
        active.retain(|id| schedule.edge_of(id).is_none_or(|e| !failed.contains(e)));
        if active.len() < cut_off {
            let n = cut_off - active.len();
            self.records.last_mut().expect("broadcast emitted").extra.insert("edge_failed".into(), json!(n));
        }
        self.tier = self.cadence.as_mut().expect("cadence").step();
        if active.is_empty() {
            return self.skip_round(start);
        }
        self.lifecycle.advance(LifecycleState::Broadcast)?;
        let upload_now = self.tier != Tier::Local;
        let mut end = start;
        for id in &active {
            let from = self.local[id].clone();
            let (upload, loss) = self.train_client(id, &from)?;
            self.local.insert(id.clone(), upload.update.params.clone());
            let download = self.needs_download.remove(id);
            let t = self.schedule_client(id, start, download, upload_now.then_some(upload), loss);
            end = end.max(t);
        }
        self.active = active;
        self.queue.push(end, EventKind::Aggregate, "server", Payload::Aggregate);
        self.drain(None)
    }

    fn failed_edges(&self) -> BTreeSet<String> {
        let AggregatorConfig::Hierarchical { edge_failures, .. } = &self.s.aggregator else {
            return BTreeSet::new();
        };
        edge_failures
            .iter()
            .filter(|f| (f.from_round..=f.to_round).contains(&self.round))
            .map(|f| f.edge.clone())
            .collect()
    }

    fn aggregate_hierarchical(&mut self, time: f64) -> Result<()> {
        let uploads = std::mem::take(&mut self.pending);
        if self.tier == Tier::Local {
            self.queue.push(time, EventKind::Evaluate, "server", Payload::Evaluate);
            return Ok(());
        }
        let schedule = self.schedule.clone().expect("schedule");
        for u in &uploads {
            if !self.period_contributions.contains_key(&u.update.client_id) {
                self.period_order.push(u.update.client_id.clone());
            }
            self.period_contributions.insert(u.update.client_id.clone(), contribution(u));
        }
        let updates: Vec<ModelUpdate> = uploads.iter().map(|u| u.update.clone()).collect();
        let edges = edge_aggregate(&schedule, &updates)?;
        let raw = 8 * self.dim as u64;
        let central_tier = self.tier == Tier::Central;
        for (edge, model) in &edges {
            let v = self.edge_versions.entry(edge.clone()).or_insert(0);
            *v += 1;
            let members = schedule.edge_groups[edge].clone();
            for m in &members {
                self.local.insert(m.clone(), model.params.clone());
                self.needs_download.insert(m.clone());
            }
            let r = self.emit(time, EventKind::EdgeAggregate, edge)?;
            r.participants = updates.iter().filter(|u| members.contains(&u.client_id)).count();
            if central_tier {
                r.bytes_up = raw;
            }
        }
        self.lifecycle.advance(LifecycleState::Aggregated)?;
        if central_tier && !edges.is_empty() {
            let central = fedavg(&edges.values().cloned().collect::<Vec<_>>())?;
            let order = std::mem::take(&mut self.period_order);
            let mut contributions_map = std::mem::take(&mut self.period_contributions);
            let contributions: Vec<Contribution> =
                order.iter().filter_map(|id| contributions_map.remove(id)).collect();
            let n_contrib = contributions.len();
            let central = self.record_global(central, contributions)?;
            self.cluster_models.insert(0, central.clone());
            self.global = central.clone();
            for id in &self.ids {
                self.local.insert(id.clone(), central.clone());
            }
            self.needs_download = self.ids.iter().cloned().collect();
            let version = self.version;
            let n_edges = schedule.edge_groups.len() - self.failed_edges().len();
            let r = self.emit(time, EventKind::Aggregate, "server")?;
            r.participants = edges.len();
            r.bytes_down = raw * n_edges as u64;
            r.extra.insert(keys::GLOBAL_VERSION.into(), json!(version));
            r.extra.insert(keys::CONTRIBUTORS.into(), json!(n_contrib));
        }
        self.queue.push(time, EventKind::Evaluate, "server", Payload::Evaluate);
        Ok(())
    }

    // ---- gossip rounds -------------------------------------------------

    fn gossip_round(&mut self) -> Result<()> {
        let start = self.clock;
        let (_, active) = self.select_round(start, None)?;
        if active.is_empty() {
            return self.skip_round(start);
        }
        self.lifecycle.advance(LifecycleState::Broadcast)?;
        let mut end = start;
        for id in &active {
            let from = self.local[id].clone();
            let (upload, loss) = self.train_client(id, &from)?;
            self.local.insert(id.clone(), upload.update.params.clone());
            end = end.max(self.schedule_client(id, start, false, None, loss));
        }
        self.active = active;
        self.queue.push(end, EventKind::GossipTick, "network", Payload::GossipStart);
        self.drain(None)
    }

    fn gossip_exchange(&mut self, time: f64) -> Result<()> {
        let AggregatorConfig::Gossip { fanout, segments, mode, .. } = &self.s.aggregator else {
            unreachable!("only called for gossip runs")
        };
        let states: BTreeMap<String, ParamVector> =
            self.active.iter().map(|id| (id.clone(), self.local[id].clone())).collect();
        let mut bytes: BTreeMap<String, u64> = self.active.iter().map(|id| (id.clone(), 0)).collect();
        let raw = 8 * self.dim as u64;
        let leader;
        let new_states = match mode {
            GossipMode::Symmetric => {
                let topology = self.topology.as_ref().expect("gossip topology");
                let seed = rng::stream(self.seed, "gossip", &[self.round]).next_u64();
                let (out, log) = gossip_round_logged(&states, topology, *fanout, *segments, seed)?;
                for e in &log {
                    let b = 8 * (e.end - e.start) as u64;
                    *bytes.get_mut(&e.initiator).expect("participant") += b;
                    *bytes.get_mut(&e.peer).expect("participant") += b;
                }
                leader = None;
                out
            }
            GossipMode::RotatingLeader => {
                let (l, out) = rotating_leader_round(&states, self.round, self.seed)?;
                for (id, b) in bytes.iter_mut() {
                    if *id != l {
                        *b = raw;
                    }
                }
                *bytes.get_mut(&l).expect("leader") = raw * (states.len() as u64 - 1);
                leader = Some(l);
                out
            }
        };
        for (id, s) in new_states {
            self.local.insert(id, s);
        }
        let r = self.emit(time, EventKind::GossipTick, "network")?;
        r.participants = states.len();
        if let Some(l) = leader {
            r.extra.insert("leader".into(), json!(l));
        }
        let mut end = time;
        for (id, b) in bytes {
            let t = time + transfer_time(b, &self.profiles[&id].1);
            end = end.max(t);
            self.queue.push(t, EventKind::GossipTick, id, Payload::GossipPeer { bytes: b });
        }
        self.queue.push(end, EventKind::Aggregate, "network", Payload::Aggregate);
        Ok(())
    }

    fn aggregate_gossip(&mut self, time: f64) -> Result<()> {
        let mut all = Vec::with_capacity(self.ids.len());
        for id in &self.ids {
            all.push(ModelUpdate::new(id.clone(), 0, self.local[id].clone(), self.data[id].n_samples())?);
        }
        let mean = fedavg(&all)?;
        let contributions: Vec<Contribution> = self
            .active
            .iter()
            .map(|id| Contribution {
                client_id: id.clone(),
                local_version: self.local_versions[id],
                update_digest: self.local[id].digest(),
            })
            .collect();
        let n = contributions.len();
        let mean = self.record_global(mean, contributions)?;
        self.cluster_models.insert(0, mean.clone());
        self.global = mean;
        let version = self.version;
        let r = self.emit(time, EventKind::Aggregate, "network")?;
        r.participants = n;
        r.extra.insert(keys::GLOBAL_VERSION.into(), json!(version));
        r.extra.insert(keys::CONTRIBUTORS.into(), json!(n));
        self.lifecycle.advance(LifecycleState::Aggregated)?;
        self.queue.push(time, EventKind::Evaluate, "server", Payload::Evaluate);
        Ok(())
    }

    // ---- event dispatch ------------------------------------------------

    fn drain(&mut self, until: Option<u64>) -> Result<()> {
        while let Some(event) = self.queue.pop() {
            let seq = event.sequence_no;
            self.handle(event)?;
            if Some(seq) == until {
                break;
            }
        }
        Ok(())
    }

    fn handle(&mut self, event: SimEvent<Payload>) -> Result<()> {
        let SimEvent { time, kind, subject, payload, .. } = event;
        match payload {
            Payload::Transfer { bytes } => {
                self.start_training()?;
                self.emit(time, kind, &subject)?.bytes_down = bytes;
            }
            Payload::Trained { local_loss } => {
                self.start_training()?;
                self.emit(time, kind, &subject)?.extra.insert("local_loss".into(), json!(local_loss));
            }
            Payload::Upload(upload) => {
                self.lifecycle.advance(LifecycleState::UpdateSubmitted)?;
                self.emit(time, kind, &subject)?.bytes_up = upload.bytes_up;
                if matches!(self.s.aggregator, AggregatorConfig::Async { .. }) {
                    self.apply_async(time, *upload)?;
                } else {
                    self.pending.push(*upload);
                }
            }
            Payload::GossipStart => self.gossip_exchange(time)?,
            Payload::GossipPeer { bytes } => {
                self.lifecycle.advance(LifecycleState::UpdateSubmitted)?;
                self.emit(time, kind, &subject)?.bytes_up = bytes;
            }
            Payload::Aggregate => match &self.s.aggregator {
                AggregatorConfig::Fedavg | AggregatorConfig::Secure => self.aggregate_sync(time)?,
                AggregatorConfig::Hierarchical { .. } => self.aggregate_hierarchical(time)?,
                AggregatorConfig::Gossip { .. } => self.aggregate_gossip(time)?,
                AggregatorConfig::Async { .. } => unreachable!("async aggregates on arrival"),
            },
            Payload::Evaluate => self.evaluate_global(time)?,
        }
        Ok(())
    }

    /// Per-client events interleave; the model enters local training once
    /// per broadcast.
    fn start_training(&mut self) -> Result<()> {
        if self.lifecycle.state() == LifecycleState::Broadcast {
            self.lifecycle.advance(LifecycleState::LocalTraining)?;
        }
        Ok(())
    }

    fn evaluate_global(&mut self, time: f64) -> Result<()> {
        let mut extra = BTreeMap::new();
        if !self.applied.is_empty() {
            let contributions = std::mem::take(&mut self.applied);
            let n = contributions.len();
            self.global = self.record_global(self.global.clone(), contributions)?;
            self.cluster_models.insert(0, self.global.clone());
            extra.insert(keys::GLOBAL_VERSION.to_string(), json!(self.version));
            extra.insert(keys::CONTRIBUTORS.to_string(), json!(n));
        }
        self.last_eval = if self.s.clustering.is_some() {
            self.served_loss()?
        } else {
            evaluate(&self.global, &self.probe)?
        };
        let c = self.s.convergence;
        let newly = self.convergence.observe(self.last_eval.loss, self.round, c.tolerance, c.window);
        extra.insert(keys::CONVERGED.to_string(), json!(newly));
        if self.clustered {
            let sizes: Vec<usize> = (0..self.assignment.n_clusters).map(|k| self.assignment.members(k).len()).collect();
            extra.insert("cluster_sizes".into(), json!(sizes));
        }
        self.lifecycle.advance(LifecycleState::Evaluated)?;
        let participants = self.active.len();
        let r = self.emit(time, EventKind::Evaluate, "server")?;
        r.participants = participants;
        r.extra = extra;
        if newly {
            info!("converged at round {}", self.round);
            self.lifecycle.advance(LifecycleState::Converged)?;
        }
        Ok(())
    }

    /// Sample-weighted loss of each client's serving model on its own data.
    fn served_loss(&self) -> Result<EvalReport> {
        let (mut loss, mut acc, mut n) = (0.0, 0.0, 0usize);
        let mut has_acc = true;
        for id in &self.ids {
            let report = evaluate(self.cluster_model_of(id), &self.data[id])?;
            loss += report.loss * report.n_samples as f64;
            match report.accuracy {
                Some(a) => acc += a * report.n_samples as f64,
                None => has_acc = false,
            }
            n += report.n_samples;
        }
        Ok(EvalReport { loss: loss / n as f64, accuracy: has_acc.then(|| acc / n as f64), n_samples: n })
    }

    // ---- deployment and monitoring -------------------------------------

    fn deploy(&mut self) -> Result<()> {
        let per_cluster: BTreeMap<usize, Digest> = self.cluster_models.iter().map(|(c, m)| (*c, m.digest())).collect();
        let plan = select_deployment(&self.coversion, &self.assignment, &per_cluster)?;
        self.lifecycle.advance(LifecycleState::Deployed)?;
        let time = self.clock;
        let n_models = per_cluster.len();
        let n_users = plan.assignments.len();
        let r = self.emit(time, EventKind::Deploy, "server")?;
        r.participants = n_users;
        r.extra.insert("models".into(), json!(n_models));
        self.deployment = Some(plan);
        Ok(())
    }

    /// Monitoring rounds after deployment. Returns true if the trigger fired.
    fn monitor(&mut self, drift_pending: &mut Option<u64>) -> Result<bool> {
        let trigger = self.s.trigger.expect("monitor needs a trigger");
        let mut state = trigger.initial_state()?;
        let k = trigger.monitored.unwrap_or(self.ids.len());
        let monitored: Vec<String> = self.ids.iter().take(k).cloned().collect();
        for m in 1..=trigger.monitor_rounds {
            self.round += 1;
            let time = self.clock + trigger.monitor_interval_ms;
            let drift = *drift_pending == Some(m);
            if drift {
                *drift_pending = None;
                self.apply_drift()?;
            }
            let mut reports = BTreeMap::new();
            let mut dropouts = 0;
            for id in &monitored {
                if sample_dropout(self.profiles[id].1.dropout_prob, id, self.round, self.seed) {
                    dropouts += 1;
                    continue;
                }
                reports.insert(id.clone(), evaluate(self.cluster_model_of(id), &self.data[id])?);
            }
            self.lifecycle.advance(LifecycleState::Monitored)?;
            let mut extra: BTreeMap<String, Value> = BTreeMap::new();
            if reports.is_empty() {
                extra.insert("no_reports".into(), json!(true));
            } else {
                let below = reports.values().filter(|r| state.underperforms(r)).count();
                state = check_replacement_trigger(&state, &reports, monitored.len())?;
                let mean_loss = reports.values().map(|r| r.loss).sum::<f64>() / reports.len() as f64;
                extra.insert("underperforming".into(), json!(below));
                extra.insert("monitored_loss".into(), json!(mean_loss));
            }
            extra.insert("consecutive_breaches".into(), json!(state.consecutive_breaches));
            extra.insert(keys::FIRED.into(), json!(state.fired));
            if drift {
                extra.insert("drift".into(), json!(true));
            }
            let n_reports = reports.len();
            let r = self.emit(time, EventKind::TriggerCheck, "server")?;
            r.participants = n_reports;
            r.dropouts = dropouts;
            r.extra = extra;
            if state.fired {
                info!("replacement trigger fired at round {}", self.round);
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Concept drift: every label flips, on clients and on the probe set.
    fn apply_drift(&mut self) -> Result<()> {
        for d in self.data.values_mut() {
            *d = flip_labels(d)?;
        }
        self.probe = flip_labels(&self.probe)?;
        Ok(())
    }

    fn finish(self) -> Result<RunOutput> {
        self.coversion.verify()?;
        self.ledger.verify()?;
        let summary = Summary::fold(&self.records);
        if summary.global_records != self.coversion.global_records()
            || summary.local_entries != self.coversion.local_entries() as u64
        {
            return Err(Error::Invariant(format!(
                "metrics report {} global records / {} local entries but the registry holds {} / {}",
                summary.global_records,
                summary.local_entries,
                self.coversion.global_records(),
                self.coversion.local_entries()
            )));
        }
        Ok(RunOutput {
            summary,
            records: self.records,
            registry: self.registry,
            coversion: self.coversion,
            ledger: self.ledger,
            probe: self.probe,
            client_data: self.data,
            client_modes: self.client_modes,
            global: self.global,
            cluster_models: self.cluster_models,
            assignment: self.assignment,
            deployment: self.deployment,
            lifecycle: self.lifecycle.trace().to_vec(),
            balance_reports: self.balance_reports,
        })
    }
}

fn contribution(u: &Upload) -> Contribution {
    Contribution { client_id: u.update.client_id.clone(), local_version: u.local_version, update_digest: u.digest }
}

fn stream_u64(seed: u64, label: &str, id: &str, round: u64) -> u64 {
    rng::stream(seed, label, &[rng::salt_str(id), round]).next_u64()
}

fn flip_labels(d: &Dataset) -> Result<Dataset> {
    let labels = match d.task() {
        crate::TaskKind::BinaryLogistic => d.labels().iter().map(|y| 1.0 - y).collect(),
        crate::TaskKind::LinearRegression => d.labels().iter().map(|y| -y).collect(),
    };
    Dataset::new(d.task(), d.n_features(), d.features().to_vec(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{Decay, StalenessPolicy};
    use crate::client_mgmt::{SelectionCriteria, SelectionMode};
    use crate::simulator::profile::ValueSpec;
    use crate::simulator::lifecycle::check_trace;
    use crate::simulator::profile::ProfileOverride;
    use crate::simulator::scenario::{ClusteringConfig, IncentiveConfig, TriggerConfig};
    use crate::TaskKind;

    fn base(n: usize, rounds: u64) -> Scenario {
        let mut s = Scenario::minimal(TaskKind::BinaryLogistic, n, rounds, 7);
        s.data.samples_per_client = 40;
        s
    }

    fn aggregators() -> Vec<AggregatorConfig> {
        vec![
            AggregatorConfig::Fedavg,
            AggregatorConfig::Secure,
            AggregatorConfig::Async {
                staleness: StalenessPolicy::new(Decay::Inverse, 1.0).unwrap(),
                mix: 0.5,
                round_deadline_ms: 40.0,
            },
            AggregatorConfig::Hierarchical { k1: 2, k2: 2, n_edges: Some(2), edge_groups: None, edge_failures: vec![] },
            AggregatorConfig::Gossip {
                topology: Default::default(),
                fanout: 1,
                segments: 2,
                mode: GossipMode::Symmetric,
            },
            AggregatorConfig::Gossip {
                topology: Default::default(),
                fanout: 1,
                segments: 1,
                mode: GossipMode::RotatingLeader,
            },
        ]
    }

    fn check_common(out: &RunOutput) {
        check_trace(&out.lifecycle).unwrap();
        for w in out.records.windows(2) {
            assert!(w[1].virtual_time_ms >= w[0].virtual_time_ms);
            assert_eq!(w[1].seq, w[0].seq + 1);
        }
        assert_eq!(out.summary, Summary::fold(&out.records));
        assert_eq!(out.summary.global_records, out.coversion.global_records());
        out.coversion.verify().unwrap();
    }

    #[test]
    fn every_aggregator_runs_and_learns() {
        for agg in aggregators() {
            let mut s = base(6, 8);
            s.aggregator = agg.clone();
            let out = run_scenario(&s).unwrap();
            check_common(&out);
            let first = out.records[0].global_loss;
            assert!(out.summary.final_loss < first, "{}: {} !< {first}", agg.name(), out.summary.final_loss);
            assert_eq!(out.summary.aggregator, agg.name());
            assert!(out.deployment.is_some());
        }
    }

    #[test]
    fn runs_are_deterministic() {
        for agg in aggregators() {
            let mut s = base(5, 4);
            s.aggregator = agg;
            s.profiles.dropout_prob = ValueSpec::Fixed(0.2);
            let a = run_scenario(&s).unwrap();
            let b = run_scenario(&s).unwrap();
            assert_eq!(a.records, b.records);
            assert_eq!(a.coversion.to_bytes(), b.coversion.to_bytes());
        }
    }

    #[test]
    fn zero_rounds_only_create_and_broadcast() {
        let out = run_scenario(&base(3, 0)).unwrap();
        let events: Vec<&str> = out.records.iter().map(|r| r.event.as_str()).collect();
        assert_eq!(events, ["task_created", "broadcast"]);
        assert!(out.deployment.is_none());
        assert_eq!(out.coversion.global_records(), 0);
    }

    #[test]
    fn rounds_without_eligible_clients_are_skipped() {
        let mut s = base(4, 3);
        let mut criteria = SelectionCriteria::new(SelectionMode::Resource, 2);
        criteria.min_compute = 1e12;
        s.selection = Some(criteria);
        let out = run_scenario(&s).unwrap();
        assert_eq!(out.summary.rounds_skipped, 3);
        assert_eq!(out.summary.rounds_run, 3);
        assert_eq!(out.coversion.global_records(), 0);
        assert_eq!(out.summary.final_loss, out.records[0].global_loss);
    }

    #[test]
    fn bytes_match_the_transfers() {
        let mut s = base(4, 2);
        s.compression = Some(Scheme::Topk { k: 2 });
        let out = run_scenario(&s).unwrap();
        let dim = s.model_dim() as u64;
        let downloads = out.records.iter().filter(|r| r.event == "broadcast_done").count() as u64;
        assert_eq!(out.summary.total_bytes_down, downloads * 8 * dim);
        for r in out.records.iter().filter(|r| r.event == "upload_done") {
            assert!(r.bytes_up < 8 * dim);
        }
    }

    #[test]
    fn upload_timing_follows_the_network_model() {
        let mut s = base(1, 1);
        s.profiles.bandwidth = ValueSpec::Fixed(100.0);
        s.profiles.base_latency_ms = ValueSpec::Fixed(5.0);
        s.profiles.compute_capacity = ValueSpec::Fixed(1e9);
        let out = run_scenario(&s).unwrap();
        let bytes = 8.0 * s.model_dim() as f64;
        let at = |e: &str| out.records.iter().find(|r| r.event == e).unwrap().virtual_time_ms;
        let down = at("broadcast_done");
        assert!((down - (5.0 + bytes / 100.0)).abs() < 1e-9);
        assert!((at("upload_done") - at("train_done") - (5.0 + bytes / 100.0)).abs() < 1e-9);
    }

    #[test]
    fn participants_are_conserved() {
        let mut s = base(8, 6);
        s.profiles.dropout_prob = ValueSpec::Fixed(0.3);
        let out = run_scenario(&s).unwrap();
        let mut round_selected = BTreeMap::new();
        for r in out.records.iter().filter(|r| r.event == "broadcast" && !r.extra.contains_key("task")) {
            assert_eq!(r.extra["selected"].as_u64().unwrap() as usize, r.participants + r.dropouts);
            round_selected.insert(r.round, r.participants);
        }
        for r in out.records.iter().filter(|r| r.event == "aggregate") {
            assert_eq!(r.participants, round_selected[&r.round]);
        }
    }

    #[test]
    fn slow_async_clients_arrive_stale() {
        let mut s = base(4, 6);
        s.aggregator = AggregatorConfig::Async {
            staleness: StalenessPolicy::new(Decay::Inverse, 1.0).unwrap(),
            mix: 1.0,
            round_deadline_ms: 50.0,
        };
        // One client is ten times slower than the deadline allows.
        s.profiles.overrides.insert(
            "client-003".into(),
            ProfileOverride { compute_capacity: Some(10.0), ..Default::default() },
        );
        let out = run_scenario(&s).unwrap();
        check_common(&out);
        assert!(out.summary.stale_updates > 0);
        let stale: Vec<&MetricsRecord> =
            out.records.iter().filter(|r| r.extra.get(keys::STALENESS).is_some_and(|t| t.as_u64() > Some(0))).collect();
        assert!(stale.iter().all(|r| r.subject == "client-003"));
        // Deferred updates show up in a later version's lineage.
        let slow_versions: Vec<u64> = (1..=out.coversion.global_records() as u64)
            .filter(|v| {
                out.coversion.find(*v).unwrap().body.contributing.iter().any(|c| c.client_id == "client-003")
            })
            .collect();
        assert!(!slow_versions.is_empty());
    }

    #[test]
    fn hierarchical_with_unit_periods_matches_fedavg() {
        let mut flat = base(6, 5);
        flat.profiles.dropout_prob = ValueSpec::Fixed(0.2);
        let mut tiered = flat.clone();
        tiered.aggregator =
            AggregatorConfig::Hierarchical { k1: 1, k2: 1, n_edges: Some(1), edge_groups: None, edge_failures: vec![] };
        let a = run_scenario(&flat).unwrap();
        let b = run_scenario(&tiered).unwrap();
        let losses = |o: &RunOutput| -> Vec<f64> {
            o.records.iter().filter(|r| r.event == "evaluate").map(|r| r.global_loss).collect()
        };
        let (la, lb) = (losses(&a), losses(&b));
        assert_eq!(la.len(), lb.len());
        for (x, y) in la.iter().zip(&lb) {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn failed_edge_drops_its_clients() {
        let mut s = base(4, 2);
        s.aggregator = AggregatorConfig::Hierarchical {
            k1: 1,
            k2: 1,
            n_edges: Some(2),
            edge_groups: None,
            edge_failures: vec![super::super::scenario::EdgeFailure { edge: "edge-1".into(), from_round: 1, to_round: 1 }],
        };
        let out = run_scenario(&s).unwrap();
        check_common(&out);
        let edges: Vec<&str> = out
            .records
            .iter()
            .filter(|r| r.event == "edge_aggregate" && r.round == 1)
            .map(|r| r.subject.as_str())
            .collect();
        assert_eq!(edges, ["edge-0"]);
        let v1 = out.coversion.find(1).unwrap();
        assert!(v1.body.contributing.iter().all(|c| c.client_id == "client-000" || c.client_id == "client-002"));
    }

    #[test]
    fn incentives_pay_the_budget_each_round() {
        let mut s = base(4, 3);
        s.incentive = Some(IncentiveConfig { scheme: IncentiveScheme::Shapley, budget: 10.0 });
        let out = run_scenario(&s).unwrap();
        check_common(&out);
        assert!((out.summary.rewards_paid - 30.0).abs() < 1e-9);
        out.ledger.verify().unwrap();
        assert_eq!(out.ledger.len(), 12);
    }

    #[test]
    fn clustering_separates_planted_concepts() {
        let mut s = base(8, 4);
        s.data.concept_modes = 2;
        s.clustering = Some(ClusteringConfig { after_round: 1, n_clusters: 2, metric: Metric::Cosine });
        let out = run_scenario(&s).unwrap();
        check_common(&out);
        let ids = s.client_ids();
        let truth: Vec<usize> = ids.iter().map(|id| out.client_modes[id]).collect();
        let found: Vec<usize> = ids.iter().map(|id| out.assignment.cluster_of(id).unwrap()).collect();
        assert_eq!(crate::client_mgmt::adjusted_rand_index(&truth, &found), 1.0);
        assert_eq!(out.cluster_models.len(), 2);
        let plan = out.deployment.unwrap();
        for id in &ids {
            let c = out.assignment.cluster_of(id).unwrap();
            assert_eq!(plan.assignments[id], out.cluster_models[&c].digest());
        }
    }

    #[test]
    fn drift_fires_the_trigger_and_retrains() {
        let mut s = base(4, 10);
        s.trigger = Some(TriggerConfig {
            threshold: 0.6,
            patience: 2,
            quorum_fraction: 0.5,
            monitored: None,
            monitor_rounds: 5,
            monitor_interval_ms: 100.0,
            drift_at_round: Some(2),
            restart: Restart::Warm,
            max_replacements: 1,
        });
        let out = run_scenario(&s).unwrap();
        check_common(&out);
        assert_eq!(out.summary.trigger_fired, 1);
        assert_eq!(out.summary.replacements, 1);
        let fired = out.records.iter().find(|r| r.extra.get(keys::FIRED) == Some(&json!(true))).unwrap();
        assert_eq!(fired.round, 10 + 3);
        assert!(out.lifecycle.contains(&LifecycleState::Replaced));
        assert_eq!(out.records.iter().filter(|r| r.event == "deploy").count(), 2);
    }

    #[test]
    fn no_drift_means_no_fire() {
        let mut s = base(4, 10);
        s.trigger = Some(TriggerConfig {
            threshold: 0.6,
            patience: 2,
            quorum_fraction: 0.5,
            monitored: Some(2),
            monitor_rounds: 5,
            monitor_interval_ms: 100.0,
            drift_at_round: None,
            restart: Restart::Warm,
            max_replacements: 1,
        });
        let out = run_scenario(&s).unwrap();
        assert_eq!(out.summary.trigger_fired, 0);
        assert_eq!(out.records.iter().filter(|r| r.event == "trigger_check").count(), 5);
        assert_eq!(out.lifecycle.last(), Some(&LifecycleState::Monitored));
    }
}
