use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::EvalReport;

/// Model replacement trigger state.
///
/// A round breaches when the fraction of monitored clients performing below
/// `threshold` reaches `quorum_fraction`. The trigger is fired while the
/// current run of consecutive breaching rounds is at least `patience` long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerState {
    pub threshold: f64,
    pub patience: u32,
    pub quorum_fraction: f64,
    #[serde(default)]
    pub consecutive_breaches: u32,
    #[serde(default)]
    pub fired: bool,
}

impl TriggerState {
    pub fn new(threshold: f64, patience: u32, quorum_fraction: f64) -> Result<Self> {
        let state = Self { threshold, patience, quorum_fraction, consecutive_breaches: 0, fired: false };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(Error::Config("trigger threshold must be finite".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("trigger patience must be >= 1".into()));
        }
        if !(self.quorum_fraction > 0.0 && self.quorum_fraction <= 1.0) {
            return Err(Error::Config("quorum_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Clear the breach run, e.g. after a replacement model is deployed.
    pub fn reset(&mut self) {
        self.consecutive_breaches = 0;
        self.fired = false;
    }

    /// Whether a single report performs below the threshold: accuracy under
    /// it for classification, loss above it for regression.
    pub fn underperforms(&self, report: &EvalReport) -> bool {
        match report.accuracy {
            Some(acc) => acc < self.threshold,
            None => report.loss > self.threshold,
        }
    }
}

/// Does this round's set of reports constitute a quorum breach?
pub fn round_breaches(
    state: &TriggerState,
    reports: &BTreeMap<String, EvalReport>,
    n_monitored: usize,
) -> Result<bool> {
    if n_monitored == 0 {
        return Err(Error::Monitoring("n_monitored must be >= 1".into()));
    }
    if reports.is_empty() {
        return Err(Error::Monitoring("no reports from monitored clients".into()));
    }
    if reports.len() > n_monitored {
        return Err(Error::Monitoring(format!(
            "{} reports from only {n_monitored} monitored clients",
            reports.len()
        )));
    }
    let below = reports.values().filter(|r| state.underperforms(r)).count();
    Ok(below as f64 / n_monitored as f64 >= state.quorum_fraction)
}

pub fn check_replacement_trigger(
    state: &TriggerState,
    reports: &BTreeMap<String, EvalReport>,
    n_monitored: usize,
) -> Result<TriggerState> {
    state.validate()?;
    let breach = round_breaches(state, reports, n_monitored)?;
    let mut next = state.clone();
    next.consecutive_breaches = if breach { state.consecutive_breaches + 1 } else { 0 };
    next.fired = next.consecutive_breaches >= next.patience;
    Ok(next)
}
