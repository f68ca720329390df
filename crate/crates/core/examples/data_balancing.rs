//! Rebalance heavily skewed client data and compare the global model with
//! and without it.

use fedsim::learning::{generate_task, SyntheticSpec};
use fedsim::simulator::scenario::BalanceConfig;
use fedsim::simulator::{run_scenario, Scenario};
use fedsim::training_patterns::balance_dataset;
use fedsim::TaskKind;

fn main() -> fedsim::Result<()> {
    let mut spec = SyntheticSpec::new(TaskKind::BinaryLogistic, 2, 0.0);
    spec.client_sizes = Some(vec![180, 20]);
    spec.label_proportions = Some(vec![vec![10.0, 170.0], vec![15.0, 5.0]]);
    let task = generate_task(&spec, 23)?;
    for (i, data) in task.partitions.iter().enumerate() {
        let (_, report) = balance_dataset(data, 1.1, 1)?;
        println!(
            "client {i}: {:?} -> {:?} (+{} synthetic, -{} dropped)",
            report.before, report.after, report.added, report.removed
        );
    }

    let mut s = Scenario::minimal(TaskKind::BinaryLogistic, 2, 50, 23);
    s.data = spec;
    let plain = run_scenario(&s)?.summary;
    s.balance = Some(BalanceConfig { tolerance: 1.1 });
    let balanced = run_scenario(&s)?.summary;
    println!(
        "\nfinal probe loss: {:.4} unbalanced, {:.4} balanced (accuracy {:.3} vs {:.3})",
        plain.final_loss,
        balanced.final_loss,
        plain.final_accuracy.unwrap_or(f64::NAN),
        balanced.final_accuracy.unwrap_or(f64::NAN)
    );
    Ok(())
}
