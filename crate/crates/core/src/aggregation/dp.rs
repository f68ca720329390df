use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::learning::ParamVector;
use crate::rng;

/// Clip `v` to the L2 ball of radius `clip_norm`, then add i.i.d. Gaussian
/// noise with standard deviation `sigma * clip_norm`.
pub fn dp_noise(v: &ParamVector, clip_norm: f64, sigma: f64, seed: u64) -> Result<ParamVector> {
    if !(clip_norm.is_finite() && clip_norm > 0.0) {
        return Err(Error::Config(format!("clip_norm must be > 0, got {clip_norm}")));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
    }
    let norm = v.l2_norm();
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    let std = sigma * clip_norm;
    let mut r = rng::stream(seed, "dp", &[]);
    let out = v
        .values()
        .iter()
        .map(|x| {
            let clipped = x * scale;
            if std > 0.0 {
                clipped + std * r.sample::<f64, _>(StandardNormal)
            } else {
                clipped
            }
        })
        .collect();
    ParamVector::new(out, v.version())
}
