//! Run a small FedAvg experiment and print how the global model improved.
//!
//! cargo run --example quickstart

use fedsim::simulator::{run_scenario, Scenario};
use fedsim::TaskKind;

fn main() -> fedsim::Result<()> {
    let scenario = Scenario::minimal(TaskKind::BinaryLogistic, 5, 25, 42);
    let out = run_scenario(&scenario)?;

    for r in out.records.iter().filter(|r| r.event == "evaluate" && r.round % 5 == 0) {
        println!(
            "round {:>2}  t={:>7.1}ms  loss {:.4}  accuracy {:.3}",
            r.round,
            r.virtual_time_ms,
            r.global_loss,
            r.global_accuracy.unwrap_or(f64::NAN)
        );
    }
    let s = &out.summary;
    println!(
        "\n{} events, {} global versions, {} bytes up, {} bytes down",
        s.events, s.global_records, s.total_bytes_up, s.total_bytes_down
    );
    println!("initial loss {:.4} -> final loss {:.4}", out.records[0].global_loss, s.final_loss);
    Ok(())
}
