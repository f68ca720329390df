//! Register heterogeneous clients and compare the selection modes.

use fedsim::client_mgmt::{select_clients, ClientRecord, ClientRegistry, DataSummary, SelectionCriteria, SelectionMode};
use fedsim::learning::{generate_task, SyntheticSpec};
use fedsim::TaskKind;

fn main() -> fedsim::Result<()> {
    let mut spec = SyntheticSpec::new(TaskKind::BinaryLogistic, 8, 3.0);
    spec.client_sizes = Some(vec![40, 300, 120, 80, 60, 200, 30, 150]);
    let task = generate_task(&spec, 1)?;

    let registry = ClientRegistry::new();
    for (i, data) in task.partitions.iter().enumerate() {
        let id = format!("phone-{i}");
        let capacity = 100.0 * (1 + i % 4) as f64;
        let bandwidth = 500.0 / (1 + i % 3) as f64;
        registry.register_client(ClientRecord::new(id.clone(), capacity, bandwidth, DataSummary::of(data)))?;
        // Pretend every client trained once so performance ranking has data.
        registry.record_performance(&id, 0, 0.3 + 0.05 * ((i * 7) % 5) as f64)?;
    }
    registry.set_online("phone-1", false)?;

    for mode in [SelectionMode::Random, SelectionMode::Resource, SelectionMode::Data, SelectionMode::Performance, SelectionMode::Cdw] {
        let mut criteria = SelectionCriteria::new(mode, 3);
        if mode == SelectionMode::Data {
            criteria.max_heterogeneity = 0.9;
        }
        println!("{:<12} -> {:?}", format!("{mode:?}"), select_clients(&registry, &criteria, 1, 7)?);
    }

    let mut strict = SelectionCriteria::new(SelectionMode::Resource, 10);
    strict.min_compute = 1e6;
    println!("nobody meets min_compute=1e6 -> {:?} (the round would be skipped)", select_clients(&registry, &strict, 1, 7)?);
    Ok(())
}
