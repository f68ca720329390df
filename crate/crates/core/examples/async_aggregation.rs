//! Asynchronous aggregation with a straggler: its updates arrive after the
//! round closes and are mixed in with a staleness-discounted weight.

use fedsim::aggregation::{Decay, StalenessPolicy};
use fedsim::simulator::profile::ProfileOverride;
use fedsim::simulator::{run_scenario, AggregatorConfig, Scenario};
use fedsim::TaskKind;

fn main() -> fedsim::Result<()> {
    for decay in [Decay::Inverse, Decay::Exponential] {
        let p = StalenessPolicy::new(decay, 0.5)?;
        let w: Vec<String> = (0..5).map(|t| format!("{:.3}", p.weight(t))).collect();
        println!("{decay:?} weights for tau 0..5: {}", w.join(" "));
    }

    let mut s = Scenario::minimal(TaskKind::LinearRegression, 4, 12, 3);
    s.training.learning_rate = 0.05;
    s.aggregator = AggregatorConfig::Async {
        staleness: StalenessPolicy::new(Decay::Inverse, 1.0)?,
        mix: 0.8,
        round_deadline_ms: 60.0,
    };
    s.profiles.overrides.insert("client-003".into(), ProfileOverride { compute_capacity: Some(8.0), ..Default::default() });
    let out = run_scenario(&s)?;
    println!();
    for r in out.records.iter().filter(|r| r.event == "aggregate") {
        println!(
            "round {:>2}  t={:>6.1}ms  {}  staleness {}  alpha {:.3}",
            r.round, r.virtual_time_ms, r.subject, r.extra["staleness"], r.extra["alpha"].as_f64().unwrap_or(0.0)
        );
    }
    println!("\n{} stale updates, final loss {:.4}", out.summary.stale_updates, out.summary.final_loss);
    Ok(())
}
