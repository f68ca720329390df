//! After deployment the model is monitored. Flipped labels make most
//! monitored clients underperform; after `patience` such rounds the model
//! is replaced and training restarts.

use fedsim::simulator::scenario::{Restart, TriggerConfig};
use fedsim::simulator::{run_scenario, Scenario};
use fedsim::TaskKind;

fn main() -> fedsim::Result<()> {
    let mut s = Scenario::minimal(TaskKind::BinaryLogistic, 6, 15, 31);
    s.trigger = Some(TriggerConfig {
        threshold: 0.6,
        patience: 2,
        quorum_fraction: 0.5,
        monitored: Some(4),
        monitor_rounds: 6,
        monitor_interval_ms: 1000.0,
        drift_at_round: Some(2),
        restart: Restart::Warm,
        max_replacements: 1,
    });
    let out = run_scenario(&s)?;
    for r in out.records.iter().filter(|r| matches!(r.event.as_str(), "deploy" | "trigger_check" | "task_created")) {
        let extra = serde_json::to_string(&r.extra).unwrap_or_default();
        println!("round {:>2}  {:<13} {extra}", r.round, r.event);
    }
    let states: Vec<String> = out.lifecycle.iter().map(|s| s.to_string()).collect();
    println!("\nlifecycle tail: {}", states[states.len().saturating_sub(8)..].join(" -> "));
    println!("fired {} time(s), {} replacement(s)", out.summary.trigger_fired, out.summary.replacements);
    Ok(())
}
