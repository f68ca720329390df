//! Serverless averaging: peers swap parameter segments until every replica
//! agrees, while the network mean never moves.

use std::collections::BTreeMap;

use fedsim::aggregation::{gossip_round, Topology};
use fedsim::ParamVector;

fn main() -> fedsim::Result<()> {
    let ids: Vec<String> = (0..8).map(|i| format!("peer-{i}")).collect();
    let states: BTreeMap<String, ParamVector> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), ParamVector::new(vec![i as f64, (i * i) as f64, -(i as f64)], 0).unwrap()))
        .collect();
    for (name, topology) in [("complete", Topology::complete(ids.clone())), ("ring", Topology::ring(ids.clone()))] {
        let mut s = states.clone();
        println!("{name} graph");
        for round in 1..=30u64 {
            s = gossip_round(&s, &topology, 1, 1, round)?;
            if round % 10 == 0 {
                let values: Vec<&ParamVector> = s.values().collect();
                let spread = values.iter().flat_map(|a| values.iter().map(move |b| a.distance(b))).fold(0.0, f64::max);
                let mean1 = values.iter().map(|v| v.values()[1]).sum::<f64>() / values.len() as f64;
                println!("  round {round:>2}: max pairwise distance {spread:.2e}, mean of coordinate 1 = {mean1:.12}");
            }
        }
    }
    Ok(())
}
