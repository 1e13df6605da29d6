use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EpmConfig;
use crate::approximator::{Activation, AdamConfig, AdamState, Mlp, Reader, TrainNoise, Writer};
use crate::env::{Observation, N_ACTIONS, OBS_DIM};
use crate::error::{Error, Result};
use crate::replay::EvalRecord;
use crate::scalar::Scalar;

pub const PREDICTIVE_IN: usize = OBS_DIM + N_ACTIONS;
pub const PREDICTIVE_OUT: usize = OBS_DIM + 1;
pub const CLASSIFIER_IN: usize = 2 * OBS_DIM;
pub const HIDDEN: [usize; 2] = [128, 128];

/// One logged step as the models see it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpmSample {
    pub s: Observation,
    pub action: usize,
    pub r: f64,
    pub s_next: Observation,
    pub crashed: bool,
}

impl EpmSample {
    pub fn from_record(rec: &EvalRecord) -> Self {
        Self {
            s: rec.transition.s,
            action: rec.transition.executed(),
            r: rec.transition.r,
            s_next: rec.transition.s_next,
            crashed: rec.crashed,
        }
    }
}

pub fn samples_from_records(records: &[EvalRecord]) -> Vec<EpmSample> {
    records.iter().map(EpmSample::from_record).collect()
}

fn predictive_input<T: Scalar>(s: &Observation, action: usize) -> Result<Vec<T>> {
    if action >= N_ACTIONS {
        return Err(Error::InvalidAction(action as i64));
    }
    let mut x: Vec<T> = s.0.iter().map(|&v| T::of(v)).collect();
    x.extend((0..N_ACTIONS).map(|a| if a == action { T::one() } else { T::zero() }));
    Ok(x)
}

fn classifier_input<T: Scalar>(s: &Observation, s_next: &Observation) -> Vec<T> {
    s.0.iter().chain(s_next.0.iter()).map(|&v| T::of(v)).collect()
}

/// Seeded split of `0..n` into (train, holdout).
fn split(n: usize, holdout: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let k = ((n as f64) * holdout).round() as usize;
    let train = idx.split_off(k.min(n));
    (train, idx)
}

fn sizes(n_in: usize, n_out: usize) -> Vec<usize> {
    let mut s = vec![n_in];
    s.extend(HIDDEN);
    s.push(n_out);
    s
}

fn noise(cfg: &EpmConfig) -> TrainNoise {
    TrainNoise {
        dropout: cfg.dropout,
        input_noise: cfg.input_noise,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMetrics {
    /// Mean absolute error per observation component.
    pub state_mae: f64,
    pub reward_mae: f64,
    pub final_loss: f64,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// `(s, a) -> (s', r)`. The network predicts the observation change; outputs
/// are clamped to the observation bounds and to [-1, 1] for the reward.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveModel<T> {
    pub net: Mlp<T>,
}

impl<T: Scalar> PredictiveModel<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            net: Mlp::new(&sizes(PREDICTIVE_IN, PREDICTIVE_OUT), Activation::Mish, seed),
        }
    }

    pub fn predict(&self, s: &Observation, action: usize) -> Result<(Observation, f64)> {
        let out = self.net.forward(&predictive_input::<T>(s, action)?)?;
        Ok(decode_prediction(s, &out))
    }

    pub fn encode(&self, w: &mut Writer) {
        w.mlp(&self.net);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let net = r.mlp()?;
        if net.n_in() != PREDICTIVE_IN || net.n_out() != PREDICTIVE_OUT {
            return Err(Error::Config(format!("predictive model has shape {:?}", net.sizes())));
        }
        Ok(Self { net })
    }
}

fn decode_prediction<T: Scalar>(s: &Observation, out: &[T]) -> (Observation, f64) {
    let mut next = *s;
    for (i, v) in next.0.iter_mut().enumerate() {
        *v += out[i].f64();
    }
    next.clamp_to_bounds();
    let r = out[OBS_DIM].f64();
    (next, if r.is_nan() { 0.0 } else { r.clamp(-1.0, 1.0) })
}

/// Absolute errors of one prediction: (mean over state components, reward).
fn prediction_errors<T: Scalar>(m: &PredictiveModel<T>, x: &EpmSample) -> Result<(f64, f64)> {
    let (s, r) = m.predict(&x.s, x.action)?;
    let st = s.0.iter().zip(&x.s_next.0).map(|(a, b)| (a - b).abs()).sum::<f64>() / OBS_DIM as f64;
    Ok((st, (r - x.r).abs()))
}

/// Fit the predictive model with MAE(state) + MAE(reward). Crash transitions
/// are left to the classifier and skipped here.
pub fn train_predictive<T: Scalar>(samples: &[EpmSample], cfg: &EpmConfig) -> Result<(PredictiveModel<T>, PredictiveMetrics)> {
    cfg.validate()?;
    let data: Vec<&EpmSample> = samples.iter().filter(|x| !x.crashed).collect();
    if data.len() < cfg.min_samples {
        return Err(Error::DatasetQuality(format!(
            "predictive model needs at least {} non-crash transitions, got {}",
            cfg.min_samples,
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut train, hold) = split(data.len(), cfg.holdout, &mut rng);
    let mut model = PredictiveModel::<T>::new(cfg.seed ^ 0x9e3779b9);
    let n = model.net.params().len();
    let mut opt = AdamState::new(n, AdamConfig::nadam(cfg.predictive_lr));
    let inputs: Vec<Vec<T>> = data
        .iter()
        .map(|x| predictive_input(&x.s, x.action))
        .collect::<Result<_>>()?;
    let mut final_loss = f64::NAN;
    for epoch in 0..cfg.predictive_epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train.chunks(cfg.batch_size) {
            let mut grads = vec![T::zero(); n];
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let x = data[i];
                let tr = model.net.trace(&inputs[i], noise(cfg), &mut rng)?;
                let mut d = vec![T::zero(); PREDICTIVE_OUT];
                for k in 0..OBS_DIM {
                    let e = tr.output[k].f64() - (x.s_next.0[k] - x.s.0[k]);
                    total += e.abs() / OBS_DIM as f64;
                    d[k] = T::of(e.signum() * inv / OBS_DIM as f64);
                }
                let e = tr.output[OBS_DIM].f64() - x.r;
                total += e.abs();
                d[OBS_DIM] = T::of(e.signum() * inv);
                model.net.backward(&tr, &d, &mut grads);
            }
            if !total.is_finite() {
                return Err(Error::TrainingFault(format!("predictive model diverged in epoch {epoch}")));
            }
            opt.step(model.net.params_mut(), &grads)?;
        }
        final_loss = total / train.len().max(1) as f64;
    }
    let eval = if hold.is_empty() { &train } else { &hold };
    let (mut st, mut rw) = (0.0, 0.0);
    for &i in eval {
        let (a, b) = prediction_errors(&model, data[i])?;
        st += a;
        rw += b;
    }
    let k = eval.len() as f64;
    Ok((
        model,
        PredictiveMetrics {
            state_mae: st / k,
            reward_mae: rw / k,
            final_loss,
            n_train: train.len(),
            n_holdout: hold.len(),
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub accuracy: f64,
    /// F1 with crash as the positive class.
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub final_loss: f64,
    pub n_train: usize,
    pub n_holdout: usize,
    pub holdout_crashes: usize,
}

/// `P(crash | s, s')` from a two-logit softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct CrashClassifier<T> {
    pub net: Mlp<T>,
    pub threshold: f64,
}

impl<T: Scalar> CrashClassifier<T> {
    pub fn new(seed: u64, threshold: f64) -> Self {
        Self {
            net: Mlp::new(&sizes(CLASSIFIER_IN, 2), Activation::Mish, seed),
            threshold,
        }
    }

    pub fn probability(&self, s: &Observation, s_next: &Observation) -> Result<f64> {
        let z = self.net.forward(&classifier_input::<T>(s, s_next))?;
        Ok(softmax2(z[0].f64(), z[1].f64()))
    }

    pub fn crashed(&self, s: &Observation, s_next: &Observation) -> Result<bool> {
        Ok(self.probability(s, s_next)? >= self.threshold)
    }

    pub fn encode(&self, w: &mut Writer) {
        w.f64(self.threshold);
        w.mlp(&self.net);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let threshold = r.f64()?;
        let net = r.mlp()?;
        if net.n_in() != CLASSIFIER_IN || net.n_out() != 2 {
            return Err(Error::Config(format!("crash classifier has shape {:?}", net.sizes())));
        }
        Ok(Self { net, threshold })
    }
}

/// Probability of class 1.
fn softmax2(z0: f64, z1: f64) -> f64 {
    let p = 1.0 / (1.0 + (z0 - z1).exp());
    if p.is_nan() {
        0.5
    } else {
        p
    }
}

pub fn classifier_metrics<T: Scalar>(c: &CrashClassifier<T>, samples: &[&EpmSample]) -> Result<(f64, f64, f64, f64)> {
    let (mut tp, mut fp, mut tn, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for x in samples {
        match (c.crashed(&x.s, &x.s_next)?, x.crashed) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fne += 1,
        }
    }
    let n = samples.len().max(1) as f64;
    let acc = (tp + tn) as f64 / n;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fne == 0 { 0.0 } else { tp as f64 / (tp + fne) as f64 };
    let f1 = if tp + fp + fne == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fne) as f64
    };
    Ok((acc, f1, precision, recall))
}

/// Two-class cross-entropy fit. Each batch slot is a crash with probability
/// at least `crash_min_fraction`; the split is stratified by class.
pub fn train_classifier<T: Scalar>(samples: &[EpmSample], cfg: &EpmConfig) -> Result<(CrashClassifier<T>, ClassifierMetrics)> {
    cfg.validate()?;
    let crash: Vec<&EpmSample> = samples.iter().filter(|x| x.crashed).collect();
    let safe: Vec<&EpmSample> = samples.iter().filter(|x| !x.crashed).collect();
    if crash.is_empty() {
        return Err(Error::DatasetQuality("classifier data has no examples of class 'crash'".into()));
    }
    if safe.is_empty() {
        return Err(Error::DatasetQuality("classifier data has no examples of class 'no crash'".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x51ab);
    let (crash_train, crash_hold) = split(crash.len(), cfg.holdout, &mut rng);
    let (safe_train, safe_hold) = split(safe.len(), cfg.holdout, &mut rng);
    if crash_train.is_empty() {
        return Err(Error::DatasetQuality("no crash examples left for training after the holdout split".into()));
    }
    let crash_train: Vec<&EpmSample> = crash_train.iter().map(|&i| crash[i]).collect();
    let safe_train: Vec<&EpmSample> = safe_train.iter().map(|&i| safe[i]).collect();
    let n_train = crash_train.len() + safe_train.len();
    let p_crash = (crash_train.len() as f64 / n_train as f64).max(cfg.crash_min_fraction);

    let mut model = CrashClassifier::<T>::new(cfg.seed ^ 0xc1a55, cfg.threshold);
    let n = model.net.params().len();
    let mut opt = AdamState::new(n, AdamConfig::nadam(cfg.classifier_lr));
    let batches = n_train.div_ceil(cfg.batch_size);
    let mut final_loss = f64::NAN;
    for epoch in 0..cfg.classifier_epochs {
        let mut total = 0.0;
        for _ in 0..batches {
            let mut grads = vec![T::zero(); n];
            let inv = 1.0 / cfg.batch_size as f64;
            for _ in 0..cfg.batch_size {
                let x = if rng.gen::<f64>() < p_crash {
                    crash_train[rng.gen_range(0..crash_train.len())]
                } else {
                    safe_train[rng.gen_range(0..safe_train.len())]
                };
                let tr = model.net.trace(&classifier_input::<T>(&x.s, &x.s_next), noise(cfg), &mut rng)?;
                let p1 = softmax2(tr.output[0].f64(), tr.output[1].f64());
                let y = if x.crashed { 1.0 } else { 0.0 };
                total -= if x.crashed { p1 } else { 1.0 - p1 }.max(f64::MIN_POSITIVE).ln();
                let d1 = (p1 - y) * inv;
                model.net.backward(&tr, &[T::of(-d1), T::of(d1)], &mut grads);
            }
            if !total.is_finite() {
                return Err(Error::TrainingFault(format!("crash classifier diverged in epoch {epoch}")));
            }
            opt.step(model.net.params_mut(), &grads)?;
        }
        final_loss = total / (batches * cfg.batch_size) as f64;
    }
    let mut hold: Vec<&EpmSample> = crash_hold.iter().map(|&i| crash[i]).collect();
    let holdout_crashes = hold.len();
    hold.extend(safe_hold.iter().map(|&i| safe[i]));
    let eval: Vec<&EpmSample> = if hold.is_empty() {
        crash_train.iter().chain(&safe_train).copied().collect()
    } else {
        hold
    };
    let (accuracy, f1, precision, recall) = classifier_metrics(&model, &eval)?;
    Ok((
        model,
        ClassifierMetrics {
            accuracy,
            f1,
            precision,
            recall,
            final_loss,
            n_train,
            n_holdout: if eval.len() == n_train { 0 } else { eval.len() },
            holdout_crashes,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_is_clamped() {
        let s = Observation([0.5; OBS_DIM]);
        let mut out = vec![10.0f64; PREDICTIVE_OUT];
        out[OBS_DIM] = -7.0;
        let (next, r) = decode_prediction(&s, &out);
        assert_eq!(r, -1.0);
        for i in 0..OBS_DIM {
            assert_eq!(next.0[i], Observation::bounds(i).1);
        }
    }

    #[test]
    fn softmax_is_probability() {
        assert_eq!(softmax2(0.0, 0.0), 0.5);
        assert!(softmax2(-800.0, 800.0) <= 1.0);
        assert!(softmax2(800.0, -800.0) >= 0.0);
    }

    #[test]
    fn single_class_names_missing_class() {
        let x = EpmSample {
            s: Observation([0.1; OBS_DIM]),
            action: 3,
            r: 0.2,
            s_next: Observation([0.1; OBS_DIM]),
            crashed: false,
        };
        let err = train_classifier::<f32>(&[x; 10], &EpmConfig::default()).unwrap_err();
        assert!(err.to_string().contains("'crash'"), "{err}");
    }
}
