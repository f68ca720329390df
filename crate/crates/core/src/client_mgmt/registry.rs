use std::collections::BTreeMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::Dataset;

/// Size and label make-up of a client's local data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSummary {
    pub n_samples: usize,
    pub class_histogram: BTreeMap<u32, usize>,
    /// Distance between the positive and negative class feature centroids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_centroid_distance: Option<f64>,
}

impl DataSummary {
    pub fn of(data: &Dataset) -> Self {
        Self {
            n_samples: data.n_samples(),
            class_histogram: data.class_histogram().clone(),
            class_centroid_distance: data.class_centroid_distance(),
        }
    }

    /// Share of the most frequent class, in `[1/classes, 1]`; 0 when empty.
    pub fn dominant_class_fraction(&self) -> f64 {
        if self.n_samples == 0 {
            return 0.0;
        }
        let max = self.class_histogram.values().copied().max().unwrap_or(0);
        max as f64 / self.n_samples as f64
    }
}

/// Registry entry for one client device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientRecord {
    pub client_id: String,
    #[serde(default)]
    pub connect_time: Option<f64>,
    #[serde(default)]
    pub disconnect_time: Option<f64>,
    /// Operations per virtual millisecond.
    pub compute_capacity: f64,
    /// Bytes per virtual millisecond.
    pub bandwidth: f64,
    #[serde(default)]
    pub energy_budget: f64,
    pub online: bool,
    /// `(round, loss)` pairs with strictly increasing rounds.
    #[serde(default)]
    pub perf_history: Vec<(u64, f64)>,
    pub data_summary: DataSummary,
}

impl ClientRecord {
    pub fn new(client_id: impl Into<String>, compute_capacity: f64, bandwidth: f64, data_summary: DataSummary) -> Self {
        Self {
            client_id: client_id.into(),
            connect_time: Some(0.0),
            disconnect_time: None,
            compute_capacity,
            bandwidth,
            energy_budget: 0.0,
            online: true,
            perf_history: Vec::new(),
            data_summary,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("client {}: {m}", self.client_id)));
        if self.client_id.is_empty() {
            return bad("empty client id");
        }
        if !(self.compute_capacity.is_finite() && self.compute_capacity > 0.0) {
            return bad("compute_capacity must be positive");
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return bad("bandwidth must be positive");
        }
        if !(self.energy_budget.is_finite() && self.energy_budget >= 0.0) {
            return bad("energy_budget must be non-negative");
        }
        if let (Some(c), Some(d)) = (self.connect_time, self.disconnect_time) {
            if d < c {
                return bad("disconnect_time precedes connect_time");
            }
        }
        if self.perf_history.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("perf_history rounds must be strictly increasing");
        }
        Ok(())
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.perf_history.last().map(|&(_, loss)| loss)
    }

    /// Fields describing the device itself; re-registering with different
    /// values is a conflict rather than an update.
    fn immutable_fields_match(&self, other: &ClientRecord) -> bool {
        self.connect_time == other.connect_time
            && self.compute_capacity == other.compute_capacity
            && self.bandwidth == other.bandwidth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Registration {
    Inserted,
    Updated,
    Unchanged,
}

/// Thread-safe client registry: concurrent readers, serialized writers,
/// whole-record reads.
#[derive(Debug, Default)]
pub struct ClientRegistry {
    clients: RwLock<BTreeMap<String, ClientRecord>>,
}

impl ClientRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_client(&self, record: ClientRecord) -> Result<Registration> {
        record.validate()?;
        let mut clients = self.clients.write().expect("registry lock");
        match clients.get(&record.client_id) {
            None => {
                clients.insert(record.client_id.clone(), record);
                Ok(Registration::Inserted)
            }
            Some(existing) if existing == &record => Ok(Registration::Unchanged),
            Some(existing) if existing.immutable_fields_match(&record) => {
                clients.insert(record.client_id.clone(), record);
                Ok(Registration::Updated)
            }
            Some(_) => Err(Error::RegistryConflict(record.client_id)),
        }
    }

    pub fn get(&self, client_id: &str) -> Result<ClientRecord> {
        self.clients
            .read()
            .expect("registry lock")
            .get(client_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("client {client_id}")))
    }

    pub fn len(&self) -> usize {
        self.clients.read().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<String> {
        self.clients.read().expect("registry lock").keys().cloned().collect()
    }

    /// Consistent copy of every record, ordered by client id.
    pub fn snapshot(&self) -> Vec<ClientRecord> {
        self.clients.read().expect("registry lock").values().cloned().collect()
    }

    pub fn set_online(&self, client_id: &str, online: bool) -> Result<()> {
        self.update(client_id, |r| r.online = online)
    }

    pub fn record_performance(&self, client_id: &str, round: u64, loss: f64) -> Result<()> {
        let mut clients = self.clients.write().expect("registry lock");
        let record = clients
            .get_mut(client_id)
            .ok_or_else(|| Error::NotFound(format!("client {client_id}")))?;
        if record.perf_history.last().is_some_and(|&(r, _)| r >= round) {
            return Err(Error::Invariant(format!(
                "client {client_id}: performance for round {round} is not newer than history"
            )));
        }
        record.perf_history.push((round, loss));
        Ok(())
    }

    fn update(&self, client_id: &str, f: impl FnOnce(&mut ClientRecord)) -> Result<()> {
        let mut clients = self.clients.write().expect("registry lock");
        let record = clients
            .get_mut(client_id)
            .ok_or_else(|| Error::NotFound(format!("client {client_id}")))?;
        f(record);
        Ok(())
    }

    /// JSON array of records sorted by client id.
    pub fn export_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("records serialize")
    }

    pub fn import_json(json: &str) -> Result<Self> {
        let records: Vec<ClientRecord> =
            serde_json::from_str(json).map_err(|e| Error::Decode(e.to_string()))?;
        let registry = Self::new();
        for record in records {
            if registry.clients.read().expect("registry lock").contains_key(&record.client_id) {
                return Err(Error::RegistryConflict(record.client_id));
            }
            registry.register_client(record)?;
        }
        Ok(registry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary() -> DataSummary {
        DataSummary {
            n_samples: 10,
            class_histogram: BTreeMap::from([(0, 4), (1, 6)]),
            class_centroid_distance: Some(1.5),
        }
    }

    fn record(id: &str) -> ClientRecord {
        ClientRecord::new(id, 5.0, 100.0, summary())
    }

    #[test]
    fn two_distinct_clients() {
        let reg = ClientRegistry::new();
        reg.register_client(record("A")).unwrap();
        reg.register_client(record("B")).unwrap();
        assert_eq!(reg.len(), 2);
    }

    #[test]
    fn identical_reregistration_is_idempotent() {
        let reg = ClientRegistry::new();
        assert_eq!(reg.register_client(record("A")).unwrap(), Registration::Inserted);
        assert_eq!(reg.register_client(record("A")).unwrap(), Registration::Unchanged);
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn mutable_fields_update_and_immutable_fields_conflict() {
        let reg = ClientRegistry::new();
        reg.register_client(record("A")).unwrap();
        let mut offline = record("A");
        offline.online = false;
        assert_eq!(reg.register_client(offline).unwrap(), Registration::Updated);
        assert!(!reg.get("A").unwrap().online);

        let mut faster = record("A");
        faster.compute_capacity = 50.0;
        assert!(matches!(reg.register_client(faster), Err(Error::RegistryConflict(_))));
    }

    #[test]
    fn hundred_clients_all_retrievable() {
        let reg = ClientRegistry::new();
        for i in 0..100 {
            reg.register_client(record(&format!("client-{i}"))).unwrap();
        }
        for i in 0..100 {
            assert_eq!(reg.get(&format!("client-{i}")).unwrap().client_id, format!("client-{i}"));
        }
        assert!(matches!(reg.get("client-100"), Err(Error::NotFound(_))));
    }

    #[test]
    fn invalid_records_are_rejected() {
        let reg = ClientRegistry::new();
        let mut r = record("A");
        r.connect_time = Some(10.0);
        r.disconnect_time = Some(5.0);
        assert!(reg.register_client(r).is_err());
        let mut r = record("B");
        r.perf_history = vec![(2, 0.5), (2, 0.4)];
        assert!(reg.register_client(r).is_err());
    }

    #[test]
    fn json_export_is_sorted_and_reimports() {
        let reg = ClientRegistry::new();
        reg.register_client(record("b")).unwrap();
        reg.register_client(record("a")).unwrap();
        reg.record_performance("a", 1, 0.25).unwrap();
        let json = reg.export_json();
        assert!(json.find("\"a\"").unwrap() < json.find("\"b\"").unwrap());
        let back = ClientRegistry::import_json(&json).unwrap();
        assert_eq!(back.snapshot(), reg.snapshot());
        assert_eq!(back.export_json(), json);
    }

    #[test]
    fn concurrent_readers_see_whole_records() {
        use std::sync::Arc;
        let reg = Arc::new(ClientRegistry::new());
        reg.register_client(record("A")).unwrap();
        let writer = {
            let reg = Arc::clone(&reg);
            std::thread::spawn(move || {
                for round in 1..200 {
                    reg.record_performance("A", round, round as f64).unwrap();
                }
            })
        };
        for _ in 0..200 {
            let r = reg.get("A").unwrap();
            assert!(r.perf_history.windows(2).all(|w| w[1].0 == w[0].0 + 1));
        }
        writer.join().unwrap();
        assert_eq!(reg.get("A").unwrap().perf_history.len(), 199);
    }
}
