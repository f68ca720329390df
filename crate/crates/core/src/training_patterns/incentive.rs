use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_mgmt::wire::{self, Reader};
use crate::model_mgmt::{ChainBody, HashChain, Sealed};

/// Exact Shapley enumeration is limited to this many clients.
pub const MAX_SHAPLEY_CLIENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncentiveScheme {
    DataVolume,
    LossImprovement,
    Shapley,
}

impl IncentiveScheme {
    fn tag(self) -> u8 {
        match self {
            IncentiveScheme::DataVolume => 0,
            IncentiveScheme::LossImprovement => 1,
            IncentiveScheme::Shapley => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(IncentiveScheme::DataVolume),
            1 => Ok(IncentiveScheme::LossImprovement),
            2 => Ok(IncentiveScheme::Shapley),
            other => Err(Error::Decode(format!("unknown incentive scheme tag {other}"))),
        }
    }
}

/// One client's part in a round, as seen on the probe set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientRoundData {
    pub n_samples: usize,
    /// Probe loss of the aggregate including this client.
    pub loss_with: f64,
    /// Probe loss of the aggregate with this client left out.
    pub loss_without: f64,
}

/// Contribution score per client. `coalition_value` maps a coalition
/// (client ids, sorted) to its value and is required for Shapley scoring.
pub fn score_contribution(
    scheme: IncentiveScheme,
    round_data: &BTreeMap<String, ClientRoundData>,
    coalition_value: Option<&dyn Fn(&[&str]) -> f64>,
) -> Result<BTreeMap<String, f64>> {
    match scheme {
        IncentiveScheme::DataVolume => {
            Ok(round_data.iter().map(|(id, d)| (id.clone(), d.n_samples as f64)).collect())
        }
        IncentiveScheme::LossImprovement => Ok(round_data
            .iter()
            .map(|(id, d)| (id.clone(), (d.loss_without - d.loss_with).max(0.0)))
            .collect()),
        IncentiveScheme::Shapley => {
            let value = coalition_value
                .ok_or_else(|| Error::Config("shapley scoring needs a coalition evaluator".into()))?;
            let players: Vec<String> = round_data.keys().cloned().collect();
            shapley_values(&players, value)
        }
    }
}

/// Exact Shapley values by enumerating all `2^n` coalitions:
/// `phi_i = sum over S not containing i of |S|! (n-|S|-1)! / n! * (v(S+i) - v(S))`.
pub fn shapley_values(
    players: &[String],
    value: impl Fn(&[&str]) -> f64,
) -> Result<BTreeMap<String, f64>> {
    let n = players.len();
    if n > MAX_SHAPLEY_CLIENTS {
        return Err(Error::Capacity(format!(
            "exact Shapley supports at most {MAX_SHAPLEY_CLIENTS} clients, got {n}"
        )));
    }
    let mut sorted: Vec<&str> = players.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let values: Vec<f64> = (0u32..1 << n)
        .map(|mask| {
            let coalition: Vec<&str> =
                (0..n).filter(|i| mask >> i & 1 == 1).map(|i| sorted[i]).collect();
            value(&coalition)
        })
        .collect();
    let factorial = |k: usize| (1..=k).map(|x| x as f64).product::<f64>();
    let n_fact = factorial(n);
    let mut out = BTreeMap::new();
    for (i, &player) in sorted.iter().enumerate() {
        let bit = 1u32 << i;
        let mut phi = 0.0;
        for mask in (0u32..1 << n).filter(|m| m & bit == 0) {
            let s = mask.count_ones() as usize;
            let weight = factorial(s) * factorial(n - s - 1) / n_fact;
            phi += weight * (values[(mask | bit) as usize] - values[mask as usize]);
        }
        out.insert(player.to_string(), phi);
    }
    Ok(out)
}

/// A reward paid to one client for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub client_id: String,
    pub round: u64,
    pub contribution_score: f64,
    pub reward: f64,
    pub scheme: IncentiveScheme,
}

impl ChainBody for LedgerEntry {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_str(out, &self.client_id);
        wire::put_u64(out, self.round);
        wire::put_f64(out, self.contribution_score);
        wire::put_f64(out, self.reward);
        wire::put_u8(out, self.scheme.tag());
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self {
            client_id: r.string()?,
            round: r.u64()?,
            contribution_score: r.f64()?,
            reward: r.f64()?,
            scheme: IncentiveScheme::from_tag(r.u8()?)?,
        })
    }
}

/// Hash-chained, append-only reward ledger.
pub type RewardLedger = HashChain<LedgerEntry>;

/// Split `budget` proportionally to `scores` (uniformly when every score is
/// zero) and append one ledger entry per client, in client id order.
pub fn distribute_rewards(
    scores: &BTreeMap<String, f64>,
    budget: f64,
    round: u64,
    scheme: IncentiveScheme,
    ledger: &RewardLedger,
) -> Result<Vec<Arc<Sealed<LedgerEntry>>>> {
    if !(budget.is_finite() && budget >= 0.0) {
        return Err(Error::Config(format!("reward budget must be >= 0, got {budget}")));
    }
    if let Some((id, s)) = scores.iter().find(|(_, s)| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::Config(format!("score for {id} must be finite and >= 0, got {s}")));
    }
    let total: f64 = scores.values().sum();
    let n = scores.len() as f64;
    Ok(scores
        .iter()
        .map(|(id, &score)| {
            let reward = if total > 0.0 { budget * score / total } else { budget / n };
            ledger.append_next(LedgerEntry {
                client_id: id.clone(),
                round,
                contribution_score: score,
                reward,
                scheme,
            })
        })
        .collect())
}
