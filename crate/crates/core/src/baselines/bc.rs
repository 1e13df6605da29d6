use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DemoDataset;
use crate::approximator::{AdamConfig, AdamState, DuelingNet};
use crate::env::{Observation, OBS_DIM};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcReport {
    pub epochs: usize,
    pub final_loss: f64,
    pub accuracy: f64,
}

/// Softmax cross-entropy of `q` against `label`, and `dL/dq`.
fn cross_entropy<T: Scalar>(q: &[T], label: usize) -> (f64, Vec<f64>) {
    let m = q.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = q.iter().map(|v| (v.f64() - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut p: Vec<f64> = e.iter().map(|v| v / z).collect();
    let loss = -(p[label].max(f64::MIN_POSITIVE)).ln();
    p[label] -= 1.0;
    (loss, p)
}

/// Fraction of samples whose greedy action equals the label.
pub fn bc_accuracy<T: Scalar>(net: &DuelingNet<T>, samples: &[(Observation, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hit = 0usize;
    for (o, a) in samples {
        if net.greedy(&o.to_scalars::<T>())? == *a {
            hit += 1;
        }
    }
    Ok(hit as f64 / samples.len() as f64)
}

pub(crate) fn bc_fit<T: Scalar>(
    net: &mut DuelingNet<T>,
    samples: &[(Observation, usize)],
    cfg: &BcConfig,
) -> Result<BcReport> {
    if samples.is_empty() {
        return Err(Error::DatasetQuality("behavioral cloning needs a non-empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("bc.batch_size must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamState::new(net.n_params(), AdamConfig::with_lr(cfg.lr));
    let inputs: Vec<[T; OBS_DIM]> = samples.iter().map(|(o, _)| o.to_scalars::<T>()).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut final_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = vec![T::zero(); net.n_params()];
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let trace = net.trace(&inputs[i])?;
                let (loss, d) = cross_entropy(&trace.q, samples[i].1);
                total += loss;
                let d_q: Vec<T> = d.iter().map(|v| T::of(v * inv)).collect();
                net.backward(&trace, &d_q, &mut grads);
            }
            if !total.is_finite() {
                return Err(Error::TrainingFault(format!("behavioral cloning diverged at epoch {epoch}, batch {b}")));
            }
            opt.step(net.params_mut(), &grads)?;
        }
        final_loss = total / samples.len() as f64;
    }
    Ok(BcReport {
        epochs: cfg.epochs,
        final_loss,
        accuracy: bc_accuracy(net, samples)?,
    })
}

/// Supervised fit of `net`'s Q-outputs, read as logits, to the expert labels.
pub fn bc_train<T: Scalar>(dataset: &DemoDataset, net: &mut DuelingNet<T>, cfg: &BcConfig) -> Result<BcReport> {
    let samples: Vec<(Observation, usize)> = dataset.records.iter().map(|r| (r.transition.s, r.label())).collect();
    bc_fit(net, &samples, cfg)
}
