use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::learning::ParamVector;
use crate::rng;

use super::ModelUpdate;

/// Fixed-point scale: values are carried as `round(x * 2^32)`.
pub const FIXED_SCALE: f64 = 4_294_967_296.0;

/// Largest magnitude accepted by [`to_fixed`]; keeps sums of many values
/// inside the signed 64-bit range.
const FIXED_LIMIT: f64 = (1u64 << 30) as f64;

pub fn to_fixed(x: f64) -> Result<u64> {
    if !x.is_finite() || x.abs() >= FIXED_LIMIT {
        return Err(Error::Numeric(format!("{x} is outside the fixed-point range")));
    }
    Ok((x * FIXED_SCALE).round() as i64 as u64)
}

pub fn from_fixed(x: u64) -> f64 {
    x as i64 as f64 / FIXED_SCALE
}

/// Shared seeds for every client pair, standing in for a key agreement
/// done before the round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSeeds {
    seeds: BTreeMap<(String, String), u64>,
}

impl PairSeeds {
    pub fn derive(session_seed: u64, participants: &[String]) -> Self {
        let ids: BTreeSet<&String> = participants.iter().collect();
        let mut seeds = BTreeMap::new();
        for a in &ids {
            for b in ids.range::<&String, _>((std::ops::Bound::Excluded(*a), std::ops::Bound::Unbounded)) {
                let s = rng::stream(session_seed, "pair", &[rng::salt_str(a), rng::salt_str(b)]).next_u64();
                seeds.insert(((*a).clone(), (*b).clone()), s);
            }
        }
        Self { seeds }
    }

    pub fn get(&self, a: &str, b: &str) -> Option<u64> {
        let key = if a < b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
        self.seeds.get(&key).copied()
    }

    /// The seeds one client holds, keyed by peer.
    pub fn view(&self, client_id: &str) -> BTreeMap<String, u64> {
        self.seeds
            .iter()
            .filter_map(|((a, b), s)| match client_id {
                c if c == a => Some((b.clone(), *s)),
                c if c == b => Some((a.clone(), *s)),
                _ => None,
            })
            .collect()
    }
}

/// An update hidden behind pairwise masks, in wrapping fixed point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedUpdate {
    pub client_id: String,
    pub masked_params: Vec<u64>,
    /// The ordered participant set the masks were built for.
    pub participants: Vec<String>,
    pub pair_seeds: BTreeMap<String, u64>,
}

impl MaskedUpdate {
    /// Wire form: id, dimension, then each coordinate as u64 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * self.masked_params.len() + self.client_id.len() + 8);
        crate::model_mgmt::wire::put_str(&mut out, &self.client_id);
        crate::model_mgmt::wire::put_u32(&mut out, self.masked_params.len() as u32);
        for v in &self.masked_params {
            crate::model_mgmt::wire::put_u64(&mut out, *v);
        }
        out
    }

    /// Bytes of masked parameters on the wire.
    pub fn payload_bytes(&self) -> u64 {
        8 * self.masked_params.len() as u64
    }
}

/// Mask one update. For each peer `j`, the PRG stream of the pair seed is
/// added when `j` sorts after the client and subtracted when it sorts
/// before, so the masks cancel in the sum over all participants.
pub fn mask(update: &ModelUpdate, participants: &[String], seeds: &PairSeeds) -> Result<MaskedUpdate> {
    let ordered: Vec<String> = participants.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if ordered.len() != participants.len() {
        return Err(Error::Parameter("participant list has duplicates".into()));
    }
    let me = update.client_id.as_str();
    if !ordered.iter().any(|p| p == me) {
        return Err(Error::Parameter(format!("{me} is not a listed participant")));
    }
    let mut masked = update.params.values().iter().map(|v| to_fixed(*v)).collect::<Result<Vec<u64>>>()?;
    for peer in ordered.iter().filter(|p| p.as_str() != me) {
        let seed = seeds
            .get(me, peer)
            .ok_or_else(|| Error::Parameter(format!("no shared seed for {me} and {peer}")))?;
        let mut prg = ChaCha20Rng::seed_from_u64(seed);
        let add = peer.as_str() > me;
        for m in &mut masked {
            let r = prg.next_u64();
            *m = if add { m.wrapping_add(r) } else { m.wrapping_sub(r) };
        }
    }
    Ok(MaskedUpdate {
        client_id: me.to_string(),
        masked_params: masked,
        participants: ordered,
        pair_seeds: seeds.view(me),
    })
}

/// Sum of masked updates in fixed point. Fails with
/// [`Error::UnrecoverableMasks`] if any listed participant did not submit.
pub fn secure_sum_fixed(masked: &[MaskedUpdate]) -> Result<Vec<u64>> {
    let first = masked.first().ok_or_else(|| Error::Aggregation("secure sum needs at least one update".into()))?;
    let dim = first.masked_params.len();
    let mut submitted = BTreeSet::new();
    for m in masked {
        if m.participants != first.participants {
            return Err(Error::Aggregation("masked updates disagree on the participant set".into()));
        }
        if m.masked_params.len() != dim {
            return Err(Error::Shape { expected: dim, actual: m.masked_params.len() });
        }
        if !submitted.insert(m.client_id.as_str()) {
            return Err(Error::Aggregation(format!("duplicate masked update from {}", m.client_id)));
        }
    }
    let missing: Vec<String> =
        first.participants.iter().filter(|p| !submitted.contains(p.as_str())).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::UnrecoverableMasks(missing));
    }
    let mut sum = vec![0u64; dim];
    for m in masked {
        for (s, v) in sum.iter_mut().zip(&m.masked_params) {
            *s = s.wrapping_add(*v);
        }
    }
    Ok(sum)
}

/// [`secure_sum_fixed`] rescaled to floating point.
pub fn secure_sum(masked: &[MaskedUpdate]) -> Result<ParamVector> {
    ParamVector::new(secure_sum_fixed(masked)?.into_iter().map(from_fixed).collect(), 0)
}

/// Unmasked reference sum in the same fixed-point arithmetic.
pub fn plain_fixed_sum(params: &[&ParamVector]) -> Result<Vec<u64>> {
    let dim = params.first().map_or(0, |p| p.dim());
    let mut sum = vec![0u64; dim];
    for p in params {
        p.ensure_dim(dim)?;
        for (s, v) in sum.iter_mut().zip(p.values()) {
            *s = s.wrapping_add(to_fixed(*v)?);
        }
    }
    Ok(sum)
}
