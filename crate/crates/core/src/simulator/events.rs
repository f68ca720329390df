use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

/// Kinds of event in the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TaskCreated,
    Broadcast,
    BroadcastDone,
    TrainDone,
    UploadDone,
    EdgeAggregate,
    Aggregate,
    GossipTick,
    Evaluate,
    Reward,
    RoundSkipped,
    TriggerCheck,
    Deploy,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::TaskCreated => "task_created",
            EventKind::Broadcast => "broadcast",
            EventKind::BroadcastDone => "broadcast_done",
            EventKind::TrainDone => "train_done",
            EventKind::UploadDone => "upload_done",
            EventKind::EdgeAggregate => "edge_aggregate",
            EventKind::Aggregate => "aggregate",
            EventKind::GossipTick => "gossip_tick",
            EventKind::Evaluate => "evaluate",
            EventKind::Reward => "reward",
            EventKind::RoundSkipped => "round_skipped",
            EventKind::TriggerCheck => "trigger_check",
            EventKind::Deploy => "deploy",
        }
    }
}

/// A scheduled event. The payload is engine specific.
#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub time: f64,
    pub sequence_no: u64,
    pub kind: EventKind,
    pub subject: String,
    pub payload: P,
}

impl<P> PartialEq for SimEvent<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for SimEvent<P> {}

impl<P> PartialOrd for SimEvent<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for SimEvent<P> {
    // Reversed so the max-heap pops the earliest (time, sequence_no).
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.sequence_no.cmp(&self.sequence_no))
    }
}

/// Events ordered by virtual time, then by scheduling order.
#[derive(Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<SimEvent<P>>,
    next_seq: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), next_seq: 0 }
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Schedule an event and return its sequence number.
    pub fn push(&mut self, time: f64, kind: EventKind, subject: impl Into<String>, payload: P) -> u64 {
        let sequence_no = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent { time, sequence_no, kind, subject: subject.into(), payload });
        sequence_no
    }

    pub fn pop(&mut self) -> Option<SimEvent<P>> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
