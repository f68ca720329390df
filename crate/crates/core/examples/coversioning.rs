//! Trace a global model back to the local models that produced it, and
//! watch the hash chain catch an edited record.

use fedsim::model_mgmt::CoVersionRegistry;
use fedsim::simulator::{run_scenario, Scenario};
use fedsim::TaskKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut s = Scenario::minimal(TaskKind::BinaryLogistic, 4, 5, 3);
    s.selection = Some(fedsim::client_mgmt::SelectionCriteria::new(fedsim::client_mgmt::SelectionMode::Random, 3));
    let out = run_scenario(&s)?;
    let registry = &out.coversion;
    println!("{} global records, {} local entries", registry.global_records(), registry.local_entries());
    for v in 1..=registry.global_records() as u64 {
        println!("version {v}: {:?}", registry.query_lineage(v)?);
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("coversion.log");
    registry.save(&path)?;
    let reloaded = CoVersionRegistry::load(&path)?;
    println!("\nreloaded chain verifies: {}", reloaded.verify().is_ok());

    let mut bytes = std::fs::read(&path)?;
    let middle = bytes.len() / 2;
    bytes[middle] ^= 0x01;
    match CoVersionRegistry::from_bytes(&bytes) {
        Ok(_) => println!("tampering went unnoticed"),
        Err(e) => println!("after flipping one bit: {e}"),
    }
    Ok(())
}
