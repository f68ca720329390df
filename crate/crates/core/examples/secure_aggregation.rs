//! Pairwise masks hide each client's update from the server, yet the masks
//! cancel in the sum. If a participant goes missing, the sum cannot be
//! recovered and aggregation aborts.

use fedsim::aggregation::{dp_noise, from_fixed, mask, plain_fixed_sum, secure_sum_fixed, ModelUpdate, PairSeeds};
use fedsim::ParamVector;

fn main() -> fedsim::Result<()> {
    let ids: Vec<String> = ["alice", "bob", "carol"].iter().map(|s| s.to_string()).collect();
    let params: Vec<ParamVector> =
        vec![ParamVector::new(vec![1.0, -2.0], 0)?, ParamVector::new(vec![0.5, 0.25], 0)?, ParamVector::new(vec![-3.0, 4.0], 0)?];
    let seeds = PairSeeds::derive(2024, &ids);
    let masked: Vec<_> = ids
        .iter()
        .zip(&params)
        .map(|(id, p)| mask(&ModelUpdate::new(id.clone(), 0, p.clone(), 1)?, &ids, &seeds))
        .collect::<fedsim::Result<_>>()?;
    for m in &masked {
        println!("{:<6} sends {:?}", m.client_id, m.masked_params);
    }
    let sum = secure_sum_fixed(&masked)?;
    println!("secure sum  {:?}", sum.iter().map(|&x| from_fixed(x)).collect::<Vec<_>>());
    println!("equals plain fixed-point sum: {}", sum == plain_fixed_sum(&params.iter().collect::<Vec<_>>())?);
    match secure_sum_fixed(&masked[..2]) {
        Ok(_) => println!("partial sum unexpectedly succeeded"),
        Err(e) => println!("without carol: {e}"),
    }

    let update = ParamVector::new(vec![3.0, 4.0], 0)?;
    let noisy = dp_noise(&update, 1.0, 0.1, 9)?;
    println!("\nclipped to norm 1 and noised: {:?}", noisy.values());
    Ok(())
}
