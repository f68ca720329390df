use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One line of `metrics.jsonl`: the state of the run right after an event.
///
/// `bytes_up`, `bytes_down` and `dropouts` are increments caused by this
/// event; the loss and accuracy are those of the latest global evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub seq: u64,
    pub round: u64,
    pub virtual_time_ms: f64,
    pub event: String,
    pub subject: String,
    pub global_loss: f64,
    pub global_accuracy: Option<f64>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub participants: usize,
    pub dropouts: usize,
    pub aggregator: String,
    #[serde(default)]
    pub extra: BTreeMap<String, Value>,
}

/// Keys of [`MetricsRecord::extra`] that the summary folds over.
pub mod keys {
    pub const GLOBAL_VERSION: &str = "global_version";
    pub const CONTRIBUTORS: &str = "contributors";
    pub const CONVERGED: &str = "converged";
    pub const REWARD: &str = "reward";
    pub const STALENESS: &str = "staleness";
    pub const FIRED: &str = "fired";
}

/// Run totals. Every field is a fold over the metrics stream, so an
/// external script can recompute it from `metrics.jsonl` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub aggregator: String,
    pub events: usize,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    pub total_bytes_up: u64,
    pub total_bytes_down: u64,
    pub total_virtual_time_ms: f64,
    /// Training rounds attempted, including skipped ones.
    pub rounds_run: u64,
    pub rounds_skipped: u64,
    /// Round of the first evaluation that met the convergence criterion.
    pub rounds_to_convergence: Option<u64>,
    pub global_records: usize,
    pub local_entries: u64,
    pub dropouts: u64,
    /// Asynchronous updates applied at least one round after they started.
    pub stale_updates: u64,
    pub rewards_paid: f64,
    pub trigger_fired: u64,
    pub replacements: u64,
}

impl Summary {
    pub fn fold(records: &[MetricsRecord]) -> Self {
        let count = |event: &str| records.iter().filter(|r| r.event == event).count() as u64;
        let extra_u64 = |r: &MetricsRecord, key: &str| r.extra.get(key).and_then(Value::as_u64);
        let last = records.last();
        Self {
            aggregator: last.map(|r| r.aggregator.clone()).unwrap_or_default(),
            events: records.len(),
            final_loss: last.map_or(0.0, |r| r.global_loss),
            final_accuracy: last.and_then(|r| r.global_accuracy),
            total_bytes_up: records.iter().map(|r| r.bytes_up).sum(),
            total_bytes_down: records.iter().map(|r| r.bytes_down).sum(),
            total_virtual_time_ms: last.map_or(0.0, |r| r.virtual_time_ms),
            rounds_run: count("evaluate") + count("round_skipped"),
            rounds_skipped: count("round_skipped"),
            rounds_to_convergence: records
                .iter()
                .find(|r| r.event == "evaluate" && r.extra.get(keys::CONVERGED) == Some(&Value::Bool(true)))
                .map(|r| r.round),
            global_records: records.iter().filter(|r| extra_u64(r, keys::GLOBAL_VERSION).is_some()).count(),
            local_entries: records.iter().filter_map(|r| extra_u64(r, keys::CONTRIBUTORS)).sum(),
            dropouts: records.iter().map(|r| r.dropouts as u64).sum(),
            stale_updates: records.iter().filter(|r| extra_u64(r, keys::STALENESS).is_some_and(|t| t > 0)).count()
                as u64,
            rewards_paid: records.iter().filter_map(|r| r.extra.get(keys::REWARD).and_then(Value::as_f64)).fold(0.0, |a, b| a + b),
            trigger_fired: records
                .iter()
                .filter(|r| r.event == "trigger_check" && r.extra.get(keys::FIRED) == Some(&Value::Bool(true)))
                .count() as u64,
            replacements: count("task_created").saturating_sub(1),
        }
    }
}
