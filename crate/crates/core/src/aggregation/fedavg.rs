use crate::error::{Error, Result};
use crate::learning::ParamVector;

use super::ModelUpdate;

/// Sample-weighted mean `sum(n_k * w_k) / sum(n_k)`.
///
/// Updates are summed in a canonical order so the result does not depend on
/// input order, and each coordinate is clamped to the inputs' range so
/// rounding can never leave their convex hull. The output version is one
/// past the newest origin round.
pub fn fedavg(updates: &[ModelUpdate]) -> Result<ParamVector> {
    let first = updates.first().ok_or_else(|| Error::Aggregation("fedavg needs at least one update".into()))?;
    let dim = first.params.dim();
    for u in updates {
        u.params.ensure_dim(dim)?;
    }
    let mut order: Vec<&ModelUpdate> = updates.iter().collect();
    order.sort_by(|a, b| {
        a.client_id
            .cmp(&b.client_id)
            .then(a.origin_round.cmp(&b.origin_round))
            .then(a.n_samples.cmp(&b.n_samples))
            .then_with(|| {
                let bits = |u: &ModelUpdate| u.params.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                bits(a).cmp(&bits(b))
            })
    });
    let total: f64 = order.iter().map(|u| u.n_samples as f64).sum();
    let mut out = vec![0.0; dim];
    for u in &order {
        let w = u.n_samples as f64 / total;
        for (o, v) in out.iter_mut().zip(u.params.values()) {
            *o += w * v;
        }
    }
    for (j, o) in out.iter_mut().enumerate() {
        let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| {
            let v = u.params.values()[j];
            (lo.min(v), hi.max(v))
        });
        *o = o.clamp(lo, hi);
    }
    let version = updates.iter().map(|u| u.origin_round).max().unwrap_or(0) + 1;
    ParamVector::new(out, version)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::update;
    use proptest::prelude::*;

    #[test]
    fn single_update_is_returned_unchanged() {
        let u = update("a", &[0.1, -7.3, 1e-9], 17);
        assert_eq!(fedavg(std::slice::from_ref(&u)).unwrap().values(), u.params.values());
    }

    #[test]
    fn equal_weights_give_midpoint() {
        let out = fedavg(&[update("a", &[0.0, 0.0], 5), update("b", &[2.0, 4.0], 5)]).unwrap();
        assert_eq!(out.values(), &[1.0, 2.0]);
    }

    #[test]
    fn weights_follow_sample_counts() {
        let out = fedavg(&[update("a", &[0.0], 1), update("b", &[4.0], 3)]).unwrap();
        // Oracle: (1*0 + 3*4) / (1 + 3).
        assert_eq!(out.values()[0], (1.0 * 0.0 + 3.0 * 4.0) / 4.0);
    }

    #[test]
    fn version_follows_newest_origin() {
        let mut a = update("a", &[1.0], 1);
        a.origin_round = 4;
        let mut b = update("b", &[1.0], 1);
        b.origin_round = 9;
        assert_eq!(fedavg(&[a, b]).unwrap().version(), 10);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(matches!(fedavg(&[]), Err(Error::Aggregation(_))));
        assert!(matches!(
            fedavg(&[update("a", &[1.0], 1), update("b", &[1.0, 2.0], 1)]),
            Err(Error::Shape { expected: 1, actual: 2 })
        ));
    }

    fn updates_strategy() -> impl Strategy<Value = Vec<ModelUpdate>> {
        (1usize..6).prop_flat_map(|dim| {
            prop::collection::vec((prop::collection::vec(-1e3f64..1e3, dim), 1usize..500), 1..12).prop_map(|rows| {
                rows.into_iter()
                    .enumerate()
                    .map(|(i, (v, n))| update(&format!("c{i:02}"), &v, n))
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn output_is_in_convex_hull(updates in updates_strategy()) {
            let out = fedavg(&updates).unwrap();
            for (j, v) in out.values().iter().enumerate() {
                let lo = updates.iter().map(|u| u.params.values()[j]).fold(f64::INFINITY, f64::min);
                let hi = updates.iter().map(|u| u.params.values()[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= *v && *v <= hi);
            }
        }

        #[test]
        fn order_does_not_matter(updates in updates_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = updates.clone();
            shuffled.shuffle(&mut crate::rng::stream(seed, "test", &[]));
            prop_assert_eq!(fedavg(&updates).unwrap(), fedavg(&shuffled).unwrap());
        }

        #[test]
        fn matches_oracle_sum(updates in updates_strategy()) {
            let out = fedavg(&updates).unwrap();
            let total: f64 = updates.iter().map(|u| u.n_samples as f64).sum();
            for (j, v) in out.values().iter().enumerate() {
                let oracle: f64 = updates.iter().map(|u| u.n_samples as f64 * u.params.values()[j]).sum::<f64>() / total;
                prop_assert!((v - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
            }
        }
    }
}
