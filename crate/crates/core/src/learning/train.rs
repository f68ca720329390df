use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, ParamVector, TaskKind};
use crate::error::{Error, Result};
use crate::rng;

/// Local training hyperparameters broadcast with the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub local_epochs: u32,
    pub batch_size: usize,
    /// Strength of the proximal pull towards the anchor model.
    #[serde(default)]
    pub proximal_lambda: f64,
    /// Seed for per-epoch batch shuffling; `None` keeps data order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle_seed: Option<u64>,
}

impl TrainingConfig {
    pub fn new(learning_rate: f64, local_epochs: u32, batch_size: usize) -> Self {
        Self { learning_rate, local_epochs, batch_size, proximal_lambda: 0.0, shuffle_seed: None }
    }

    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > n_samples {
            return Err(Error::Config(format!(
                "batch_size {} must be in 1..={n_samples}",
                self.batch_size
            )));
        }
        if !(self.proximal_lambda.is_finite() && self.proximal_lambda >= 0.0) {
            return Err(Error::Config("proximal_lambda must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Loss, and accuracy for classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub n_samples: usize,
}

fn linear(params: &[f64], row: &[f64]) -> f64 {
    let d = row.len();
    row.iter().zip(&params[..d]).map(|(x, w)| x * w).sum::<f64>() + params[d]
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sample_loss(task: TaskKind, z: f64, y: f64) -> f64 {
    match task {
        TaskKind::LinearRegression => (z - y) * (z - y),
        TaskKind::BinaryLogistic => softplus(z) - y * z,
    }
}

/// d(sample loss)/dz
fn sample_residual(task: TaskKind, z: f64, y: f64) -> f64 {
    match task {
        TaskKind::LinearRegression => 2.0 * (z - y),
        TaskKind::BinaryLogistic => sigmoid(z) - y,
    }
}

fn check_dims(model: &ParamVector, data: &Dataset) -> Result<()> {
    model.ensure_dim(data.model_dim())
}

fn batch_gradient(params: &[f64], data: &Dataset, batch: &[usize], grad: &mut [f64]) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let d = data.n_features();
    for &i in batch {
        let row = &data.features()[i];
        let r = sample_residual(data.task(), linear(params, row), data.labels()[i]);
        for (g, x) in grad[..d].iter_mut().zip(row) {
            *g += r * x;
        }
        grad[d] += r;
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
}

/// Mean task loss of `params` over `data` (no proximal term).
pub fn mean_loss(model: &ParamVector, data: &Dataset) -> Result<f64> {
    check_dims(model, data)?;
    if data.is_empty() {
        return Err(Error::Evaluation("empty dataset".into()));
    }
    Ok(raw_mean_loss(model.values(), data))
}

fn raw_mean_loss(params: &[f64], data: &Dataset) -> f64 {
    let total: f64 = data
        .features()
        .iter()
        .zip(data.labels())
        .map(|(row, &y)| sample_loss(data.task(), linear(params, row), y))
        .sum();
    total / data.n_samples() as f64
}

/// Full-data gradient of the mean task loss.
pub fn analytic_gradient(model: &ParamVector, data: &Dataset) -> Result<Vec<f64>> {
    check_dims(model, data)?;
    if data.is_empty() {
        return Err(Error::Evaluation("empty dataset".into()));
    }
    let all: Vec<usize> = (0..data.n_samples()).collect();
    let mut grad = vec![0.0; model.dim()];
    batch_gradient(model.values(), data, &all, &mut grad);
    Ok(grad)
}

/// Mini-batch SGD on the task loss, optionally coupled to `anchor` by
/// `(lambda / 2) * ||w - anchor||^2`.
///
/// The proximal term is applied as an exact proximal step after each
/// gradient step, `w <- (w - lr * g + lr * lambda * anchor) / (1 + lr * lambda)`,
/// which stays stable for arbitrarily large `lambda`.
pub fn local_train(
    model: &ParamVector,
    data: &Dataset,
    cfg: &TrainingConfig,
    anchor: Option<&ParamVector>,
) -> Result<ParamVector> {
    check_dims(model, data)?;
    if let Some(a) = anchor {
        a.ensure_dim(model.dim())?;
    }
    cfg.validate(data.n_samples())?;
    let lr = cfg.learning_rate;
    let coupling = anchor.filter(|_| cfg.proximal_lambda > 0.0).map(|a| (a, lr * cfg.proximal_lambda));

    let mut w = model.values().to_vec();
    let mut grad = vec![0.0; w.len()];
    let mut order: Vec<usize> = (0..data.n_samples()).collect();
    for epoch in 0..cfg.local_epochs {
        if let Some(seed) = cfg.shuffle_seed {
            order.sort_unstable();
            order.shuffle(&mut rng::stream(seed, "training", &[u64::from(epoch)]));
        }
        for batch in order.chunks(cfg.batch_size) {
            batch_gradient(&w, data, batch, &mut grad);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in epoch {epoch}")));
            }
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi -= lr * gi;
            }
            if let Some((a, step)) = coupling {
                for (wi, ai) in w.iter_mut().zip(a.values()) {
                    *wi = (*wi + step * ai) / (1.0 + step);
                }
            }
        }
    }
    ParamVector::new(w, model.version())
}

pub fn evaluate(model: &ParamVector, data: &Dataset) -> Result<EvalReport> {
    let loss = mean_loss(model, data)?;
    let accuracy = match data.task() {
        TaskKind::LinearRegression => None,
        TaskKind::BinaryLogistic => {
            let correct = data
                .features()
                .iter()
                .zip(data.labels())
                .filter(|(row, &y)| (linear(model.values(), row) >= 0.0) == (y == 1.0))
                .count();
            Some(correct as f64 / data.n_samples() as f64)
        }
    };
    Ok(EvalReport { loss, accuracy, n_samples: data.n_samples() })
}

/// Max absolute difference between the analytic gradient and a central
/// finite difference with step 1e-6.
pub fn gradient_check(model: &ParamVector, data: &Dataset) -> Result<f64> {
    const STEP: f64 = 1e-6;
    let analytic = analytic_gradient(model, data)?;
    let mut probe = model.values().to_vec();
    let mut worst = 0.0f64;
    for i in 0..probe.len() {
        let original = probe[i];
        probe[i] = original + STEP;
        let up = raw_mean_loss(&probe, data);
        probe[i] = original - STEP;
        let down = raw_mean_loss(&probe, data);
        probe[i] = original;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max((analytic[i] - numeric).abs());
    }
    Ok(worst)
}
