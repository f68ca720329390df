//! Two groups of clients learn opposite concepts. Clustering their update
//! directions recovers the groups and each group gets its own model.

use fedsim::client_mgmt::{adjusted_rand_index, Metric};
use fedsim::learning::mean_loss;
use fedsim::simulator::scenario::ClusteringConfig;
use fedsim::simulator::{run_scenario, Scenario};
use fedsim::TaskKind;

fn main() -> fedsim::Result<()> {
    let mut s = Scenario::minimal(TaskKind::BinaryLogistic, 8, 20, 17);
    s.data.concept_modes = 2;
    s.clustering = Some(ClusteringConfig { after_round: 1, n_clusters: 2, metric: Metric::Cosine });
    let out = run_scenario(&s)?;

    let ids = s.client_ids();
    let truth: Vec<usize> = ids.iter().map(|id| out.client_modes[id]).collect();
    let found: Vec<usize> = ids.iter().map(|id| out.assignment.cluster_of(id).unwrap()).collect();
    println!("planted modes {truth:?}");
    println!("clusters      {found:?}");
    println!("adjusted Rand index {:.3}\n", adjusted_rand_index(&truth, &found));

    println!("{:<11} {:>8} {:>8}", "client", "matched", "swapped");
    for id in &ids {
        let c = out.assignment.cluster_of(id).unwrap();
        let own = mean_loss(&out.cluster_models[&c], &out.client_data[id])?;
        let other = mean_loss(&out.cluster_models[&(1 - c)], &out.client_data[id])?;
        println!("{id:<11} {own:>8.4} {other:>8.4}");
    }
    if let Some(plan) = &out.deployment {
        println!("\ndeployed {} clients onto {} models", plan.assignments.len(), out.cluster_models.len());
    }
    Ok(())
}
