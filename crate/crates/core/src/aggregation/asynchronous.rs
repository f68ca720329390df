use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::ParamVector;

use super::ModelUpdate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    /// `1 / (1 + rate * tau)`
    Inverse,
    /// `exp(-rate * tau)`
    Exponential,
}

/// How much a stale update is discounted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StalenessPolicy {
    pub decay: Decay,
    pub rate: f64,
}

impl StalenessPolicy {
    pub fn new(decay: Decay, rate: f64) -> Result<Self> {
        let p = Self { decay, rate };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::Config(format!("staleness rate must be > 0, got {}", self.rate)));
        }
        Ok(())
    }

    /// Weight for an update `tau` rounds old; 1 at `tau = 0`.
    pub fn weight(&self, tau: u64) -> f64 {
        let t = tau as f64;
        match self.decay {
            Decay::Inverse => 1.0 / (1.0 + self.rate * t),
            Decay::Exponential => (-self.rate * t).exp(),
        }
    }
}

/// Mix one update into the global model as soon as it arrives:
/// `(1 - a) * global + a * update` with `a = mix * weight(tau)`.
pub fn async_aggregate(
    current_global: &ParamVector,
    update: &ModelUpdate,
    current_round: u64,
    policy: &StalenessPolicy,
    mix: f64,
) -> Result<ParamVector> {
    if update.origin_round > current_round {
        return Err(Error::Causality { origin: update.origin_round, current: current_round });
    }
    if !(mix > 0.0 && mix <= 1.0) {
        return Err(Error::Config(format!("async mix must be in (0, 1], got {mix}")));
    }
    policy.validate()?;
    update.params.ensure_dim(current_global.dim())?;
    let alpha = mix * policy.weight(current_round - update.origin_round);
    let out = current_global
        .values()
        .iter()
        .zip(update.params.values())
        .map(|(&g, &u)| ((1.0 - alpha) * g + alpha * u).clamp(g.min(u), g.max(u)))
        .collect();
    ParamVector::new(out, current_round + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{fedavg, update};
    use proptest::prelude::*;

    fn inverse(rate: f64) -> StalenessPolicy {
        StalenessPolicy::new(Decay::Inverse, rate).unwrap()
    }

    #[test]
    fn fresh_full_mix_takes_the_update() {
        let g = ParamVector::new(vec![5.0, -1.0], 0).unwrap();
        let u = update("a", &[0.3, 0.7], 10);
        let out = async_aggregate(&g, &u, 0, &inverse(1.0), 1.0).unwrap();
        assert_eq!(out.values(), u.params.values());
    }

    #[test]
    fn inverse_decay_at_three_rounds() {
        let g = ParamVector::new(vec![0.0], 0).unwrap();
        let u = update("a", &[1.0], 1);
        let out = async_aggregate(&g, &u, 3, &inverse(1.0), 0.8).unwrap();
        // alpha = mix / (1 + 3)
        assert!((out.values()[0] - 0.8 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn future_update_is_a_causality_error() {
        let g = ParamVector::new(vec![0.0], 0).unwrap();
        let mut u = update("a", &[1.0], 1);
        u.origin_round = 4;
        assert!(matches!(
            async_aggregate(&g, &u, 3, &inverse(1.0), 1.0),
            Err(Error::Causality { origin: 4, current: 3 })
        ));
    }

    #[test]
    fn single_client_matches_sync_sequence() {
        let mut global = ParamVector::new(vec![0.0, 0.0], 0).unwrap();
        for round in 0..20u64 {
            let mut u = update("a", &[round as f64 * 0.1, -(round as f64)], 3);
            u.origin_round = round;
            let sync = fedavg(std::slice::from_ref(&u)).unwrap();
            global = async_aggregate(&global, &u, round, &inverse(2.0), 1.0).unwrap();
            assert_eq!(global, sync);
        }
    }

    #[test]
    fn rejects_bad_policy_and_mix() {
        assert!(StalenessPolicy::new(Decay::Exponential, 0.0).is_err());
        let g = ParamVector::new(vec![0.0], 0).unwrap();
        assert!(async_aggregate(&g, &update("a", &[1.0], 1), 0, &inverse(1.0), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn alpha_strictly_decreases_in_tau(rate in 0.01f64..5.0, tau in 0u64..50, exp in any::<bool>()) {
            let p = StalenessPolicy::new(if exp { Decay::Exponential } else { Decay::Inverse }, rate).unwrap();
            prop_assert_eq!(p.weight(0), 1.0);
            prop_assert!(p.weight(tau + 1) < p.weight(tau));
        }

        #[test]
        fn result_stays_on_segment(
            g in prop::collection::vec(-100f64..100.0, 3),
            u in prop::collection::vec(-100f64..100.0, 3),
            tau in 0u64..10,
            mix in 0.01f64..=1.0,
        ) {
            let global = ParamVector::new(g.clone(), 0).unwrap();
            let mut up = update("a", &u, 1);
            up.origin_round = 10 - tau;
            let out = async_aggregate(&global, &up, 10, &inverse(0.5), mix).unwrap();
            let alpha = mix * inverse(0.5).weight(tau);
            for j in 0..3 {
                let v = out.values()[j];
                prop_assert!(g[j].min(u[j]) <= v && v <= g[j].max(u[j]));
                prop_assert!((v - (g[j] + alpha * (u[j] - g[j]))).abs() < 1e-9);
            }
        }
    }
}
