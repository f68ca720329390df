//! Edge servers aggregate their clients every k1 rounds; the central
//! server aggregates the edges every k1*k2 rounds.

use fedsim::simulator::{run_scenario, AggregatorConfig, Scenario};
use fedsim::TaskKind;

fn main() -> fedsim::Result<()> {
    let mut s = Scenario::minimal(TaskKind::BinaryLogistic, 9, 12, 5);
    s.aggregator = AggregatorConfig::Hierarchical { k1: 2, k2: 3, n_edges: Some(3), edge_groups: None, edge_failures: vec![] };
    let out = run_scenario(&s)?;
    for r in out.records.iter().filter(|r| matches!(r.event.as_str(), "edge_aggregate" | "aggregate")) {
        println!("round {:>2}  {:<15} {:<7} participants {}", r.round, r.event, r.subject, r.participants);
    }
    println!("\ncentral versions: {}, final loss {:.4}", out.coversion.global_records(), out.summary.final_loss);
    Ok(())
}
