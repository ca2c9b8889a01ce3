//! Local SGD on a device shard, weighted aggregation and evaluation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::fl::dataset::Dataset;
use crate::fl::model::Mlp;
use crate::quantize::FULL_PRECISION_BITS;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 10,
            local_epochs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("train.local_epochs", "must be at least 1"));
        }
        Ok(())
    }
}

/// What a device sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub device: usize,
    /// `theta_in - theta_out`.
    pub delta: Vec<f64>,
    /// `|D_k|`, the aggregation weight numerator.
    pub samples: usize,
    pub bit_width: u32,
}

/// Mini-batch SGD over `train` for the configured epochs, reshuffling every
/// epoch.
#[allow(clippy::too_many_arguments)]
pub fn local_train<R: Rng>(
    model: &Mlp,
    theta: &[f64],
    data: &Dataset,
    train: &[usize],
    samples: usize,
    cfg: &TrainConfig,
    rng: &mut R,
    device: usize,
    round: usize,
) -> Result<LocalUpdate> {
    if train.is_empty() {
        return Err(Error::domain(format!("device {device} has no training samples")));
    }
    if theta.len() != model.parameter_count() {
        return Err(Error::LengthMismatch {
            expected: model.parameter_count(),
            found: theta.len(),
        });
    }
    let mut local = theta.to_vec();
    let mut grad = vec![0.0; local.len()];
    let mut order = train.to_vec();
    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let loss = model.batch_gradient(&local, data, batch, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Diverged { round, device });
            }
            for (p, g) in local.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
        }
    }
    let delta: Vec<f64> = theta.iter().zip(&local).map(|(a, b)| a - b).collect();
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(Error::Diverged { round, device });
    }
    Ok(LocalUpdate {
        device,
        delta,
        samples,
        bit_width: FULL_PRECISION_BITS,
    })
}

/// `theta - sum_k omega_k delta_k` with `omega_k` proportional to the sample
/// counts of the updates given.
pub fn aggregate(theta: &[f64], updates: &[LocalUpdate]) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::domain("nothing to aggregate"));
    }
    for u in updates {
        if u.delta.len() != theta.len() {
            return Err(Error::LengthMismatch {
                expected: theta.len(),
                found: u.delta.len(),
            });
        }
    }
    let total: usize = updates.iter().map(|u| u.samples).sum();
    if total == 0 {
        return Err(Error::domain("updates carry no samples"));
    }
    let mut out = theta.to_vec();
    for u in updates {
        let omega = u.samples as f64 / total as f64;
        for (o, d) in out.iter_mut().zip(&u.delta) {
            *o -= omega * d;
        }
    }
    Ok(out)
}

/// Fraction of `indices` classified correctly.
pub fn evaluate(model: &Mlp, theta: &[f64], data: &Dataset, indices: &[usize], exec: Execution) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let chunks: Vec<&[usize]> = indices.chunks(64).collect();
    let correct: usize = exec::map(exec, &chunks, |chunk| {
        chunk
            .iter()
            .filter(|&&i| model.predict(theta, data.sample(i)) == data.label(i))
            .count()
    })
    .into_iter()
    .sum();
    correct as f64 / indices.len() as f64
}
