use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::Dataset;
use crate::rng;

/// Jitter standard deviation as a fraction of each feature's std.
const JITTER_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub before: BTreeMap<u32, usize>,
    pub after: BTreeMap<u32, usize>,
    pub added: usize,
    pub removed: usize,
}

/// Rebalance classes so that the max/min class-count ratio is within
/// `tolerance`: majority classes are downsampled uniformly and minority
/// classes are oversampled with jittered duplicates, all towards the mean
/// class count.
pub fn balance_dataset(data: &Dataset, tolerance: f64, seed: u64) -> Result<(Dataset, BalanceReport)> {
    if !(tolerance.is_finite() && tolerance >= 1.0) {
        return Err(Error::Config(format!("balance tolerance must be >= 1, got {tolerance}")));
    }
    let before = data.class_histogram().clone();
    if before.len() < 2 {
        return Err(Error::BalancingImpossible(format!(
            "dataset holds {} class(es); adding a missing class needs knowledge transfer, not augmentation",
            before.len()
        )));
    }
    let max = *before.values().max().expect("non-empty");
    let min = *before.values().min().expect("non-empty");
    if max as f64 <= tolerance * min as f64 {
        let report = BalanceReport { after: before.clone(), before, added: 0, removed: 0 };
        return Ok((data.clone(), report));
    }

    let mut rng = rng::stream(seed, "balance", &[]);
    let target = (data.n_samples() as f64 / before.len() as f64).round().max(1.0) as usize;
    let std = data.feature_std();
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for i in 0..data.n_samples() {
        by_class.entry(data.class_at(i)).or_default().push(i);
    }

    let mut rows = Vec::with_capacity(target * by_class.len());
    let mut labels = Vec::with_capacity(target * by_class.len());
    let (mut added, mut removed) = (0, 0);
    for members in by_class.values() {
        if members.len() >= target {
            let mut keep = members.clone();
            keep.shuffle(&mut rng);
            keep.truncate(target);
            keep.sort_unstable();
            removed += members.len() - target;
            for i in keep {
                rows.push(data.features()[i].clone());
                labels.push(data.labels()[i]);
            }
        } else {
            for &i in members {
                rows.push(data.features()[i].clone());
                labels.push(data.labels()[i]);
            }
            for _ in members.len()..target {
                let source = members[rng.random_range(0..members.len())];
                let row = data.features()[source]
                    .iter()
                    .zip(&std)
                    .map(|(x, s)| x + JITTER_SCALE * s * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                rows.push(row);
                labels.push(data.labels()[source]);
                added += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let balanced = Dataset::new(
        data.task(),
        data.n_features(),
        order.iter().map(|&i| rows[i].clone()).collect(),
        order.iter().map(|&i| labels[i]).collect(),
    )?;
    let report = BalanceReport { before, after: balanced.class_histogram().clone(), added, removed };
    Ok((balanced, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::TaskKind;
    use proptest::prelude::*;

    fn labeled(counts: &[(u32, usize)]) -> Dataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut k = 0.0;
        for &(class, n) in counts {
            for _ in 0..n {
                rows.push(vec![k, 3.0, -k * 0.5]);
                labels.push(class as f64);
                k += 1.0;
            }
        }
        Dataset::new(TaskKind::BinaryLogistic, 3, rows, labels).unwrap()
    }

    #[test]
    fn balanced_data_is_untouched() {
        let d = labeled(&[(0, 100), (1, 100)]);
        let (out, report) = balance_dataset(&d, 1.1, 1).unwrap();
        assert_eq!(out, d);
        assert_eq!((report.added, report.removed), (0, 0));
    }

    #[test]
    fn ninety_ten_with_unit_tolerance() {
        let d = labeled(&[(0, 90), (1, 10)]);
        let (out, report) = balance_dataset(&d, 1.0, 2).unwrap();
        let a = out.class_histogram()[&0];
        let b = out.class_histogram()[&1];
        assert_eq!(a, b);
        assert!((10..=90).contains(&a));
        assert_eq!(report.after, *out.class_histogram());
        assert_eq!(report.added, 40);
        assert_eq!(report.removed, 40);
    }

    #[test]
    fn zero_variance_feature_stays_constant() {
        let d = labeled(&[(0, 30), (1, 3)]);
        let (out, _) = balance_dataset(&d, 1.0, 3).unwrap();
        assert!(out.features().iter().all(|r| r[1] == 3.0));
    }

    #[test]
    fn single_class_cannot_be_balanced() {
        let d = labeled(&[(1, 10)]);
        assert!(matches!(balance_dataset(&d, 1.0, 0), Err(Error::BalancingImpossible(_))));
    }

    #[test]
    fn tolerance_below_one_is_rejected() {
        let d = labeled(&[(0, 5), (1, 5)]);
        assert!(matches!(balance_dataset(&d, 0.5, 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn result_respects_tolerance_and_keeps_classes(
            a in 1usize..200,
            b in 1usize..200,
            tolerance in 1.0f64..3.0,
            seed in any::<u64>(),
        ) {
            let d = labeled(&[(0, a), (1, b)]);
            let (out, report) = balance_dataset(&d, tolerance, seed).unwrap();
            let hist = out.class_histogram();
            prop_assert_eq!(hist.keys().collect::<Vec<_>>(), d.class_histogram().keys().collect::<Vec<_>>());
            let max = *hist.values().max().unwrap() as f64;
            let min = *hist.values().min().unwrap() as f64;
            prop_assert!(max <= tolerance * min);
            prop_assert_eq!(out.n_samples() + report.removed, d.n_samples() + report.added);
        }
    }
}
