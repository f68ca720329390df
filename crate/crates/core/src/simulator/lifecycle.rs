use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stage of the global model's lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    TaskCreated,
    Broadcast,
    LocalTraining,
    UpdateSubmitted,
    Aggregated,
    Evaluated,
    Converged,
    Deployed,
    Monitored,
    Replaced,
}

impl LifecycleState {
    pub fn name(self) -> &'static str {
        match self {
            LifecycleState::TaskCreated => "task_created",
            LifecycleState::Broadcast => "broadcast",
            LifecycleState::LocalTraining => "local_training",
            LifecycleState::UpdateSubmitted => "update_submitted",
            LifecycleState::Aggregated => "aggregated",
            LifecycleState::Evaluated => "evaluated",
            LifecycleState::Converged => "converged",
            LifecycleState::Deployed => "deployed",
            LifecycleState::Monitored => "monitored",
            LifecycleState::Replaced => "replaced",
        }
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Edges of the state graph. Besides the main loop this allows an
/// asynchronous round to evaluate with nothing (or only stale updates)
/// arriving, a hierarchical round to end without any upload, and several
/// updates to be aggregated one by one within a round.
pub fn is_legal(from: LifecycleState, to: LifecycleState) -> bool {
    use LifecycleState::*;
    matches!(
        (from, to),
        (TaskCreated, Broadcast)
            | (Broadcast, LocalTraining)
            | (Broadcast, UpdateSubmitted)
            | (Broadcast, Evaluated)
            | (LocalTraining, UpdateSubmitted)
            | (LocalTraining, Evaluated)
            | (UpdateSubmitted, Aggregated)
            | (Aggregated, UpdateSubmitted)
            | (Aggregated, Evaluated)
            | (Evaluated, Broadcast)
            | (Evaluated, Converged)
            | (Evaluated, Deployed)
            | (Converged, Broadcast)
            | (Converged, Deployed)
            | (Deployed, Monitored)
            | (Monitored, Monitored)
            | (Monitored, Replaced)
            | (Replaced, TaskCreated)
    )
}

/// Current state plus the full transition trace.
#[derive(Debug, Clone)]
pub struct Lifecycle {
    trace: Vec<LifecycleState>,
}

impl Default for Lifecycle {
    fn default() -> Self {
        Self::new()
    }
}

impl Lifecycle {
    pub fn new() -> Self {
        Self { trace: vec![LifecycleState::TaskCreated] }
    }

    pub fn state(&self) -> LifecycleState {
        *self.trace.last().expect("trace starts non-empty")
    }

    pub fn trace(&self) -> &[LifecycleState] {
        &self.trace
    }

    /// Move to `to`. Staying in the current state is a no-op, except for
    /// `monitored` where each monitoring round is its own step.
    pub fn advance(&mut self, to: LifecycleState) -> Result<()> {
        let from = self.state();
        if from == to && to != LifecycleState::Monitored {
            return Ok(());
        }
        if !is_legal(from, to) {
            return Err(Error::Invariant(format!("illegal lifecycle transition {from} -> {to}")));
        }
        self.trace.push(to);
        Ok(())
    }
}

/// Checks that every consecutive pair in `trace` is an edge of the graph.
pub fn check_trace(trace: &[LifecycleState]) -> Result<()> {
    for (i, pair) in trace.windows(2).enumerate() {
        if !is_legal(pair[0], pair[1]) {
            return Err(Error::Invariant(format!("illegal transition {} -> {} at step {}", pair[0], pair[1], i + 1)));
        }
    }
    Ok(())
}
