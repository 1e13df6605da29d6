use serde::{Deserialize, Serialize};

use super::{expert_transition, DemoDataset};
use crate::agent::{run_training, AgentConfig, ClippedDdqn, Learner, RunReport, Sinks, TrainStats};
use crate::approximator::{loss_and_gradients, Writer};
use crate::env::{Observation, TrackEnv};
use crate::error::{Error, Result};
use crate::intervention::{InterventionSchedule, NoSource};
use crate::replay::{Sample, Transition};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqfdConfig {
    pub pretrain_steps: u64,
    pub margin: f64,
    /// Weight of the large-margin imitation loss.
    pub lambda_e: f64,
    pub agent: AgentConfig,
}

impl Default for DqfdConfig {
    fn default() -> Self {
        Self {
            pretrain_steps: 2000,
            margin: 0.8,
            lambda_e: 1.0,
            agent: AgentConfig::default(),
        }
    }
}

impl DqfdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("dqfd.margin must be > 0, got {}", self.margin)));
        }
        if !(self.lambda_e >= 0.0) {
            return Err(Error::Config(format!("dqfd.lambda_e must be >= 0, got {}", self.lambda_e)));
        }
        self.agent.validate()
    }
}

/// `max_a [Q(s,a) + m * (a != a_e)] - Q(s, a_e)` and the maximizing action.
pub fn margin_loss<T: Scalar>(q: &[T], a_e: usize, margin: f64) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (a, v) in q.iter().enumerate() {
        let x = v.f64() + if a == a_e { 0.0 } else { margin };
        if x > best.0 {
            best = (x, a);
        }
    }
    (best.0 - q[a_e].f64(), best.1)
}

/// Clipped double DQN whose replay starts with pinned expert demonstrations,
/// with an extra large-margin loss on demonstration samples.
#[derive(Clone, Debug)]
pub struct Dqfd<T> {
    pub inner: ClippedDdqn<T>,
    pub cfg: DqfdConfig,
}

impl<T: Scalar> Dqfd<T> {
    pub fn new(cfg: DqfdConfig, demos: &DemoDataset) -> Result<Self> {
        cfg.validate()?;
        let mut inner = ClippedDdqn::new(cfg.agent.clone())?;
        for r in &demos.records {
            let t = expert_transition(r.transition, r.label());
            inner.core.buffer.push_pinned(t, cfg.agent.initial_priority)?;
        }
        Ok(Self { inner, cfg })
    }

    pub fn demo_count(&self) -> usize {
        self.inner.core.buffer.pinned()
    }

    fn step_on(&mut self, batch: &Sample<Transition>) -> Result<TrainStats> {
        if self.cfg.lambda_e == 0.0 {
            return self.inner.step_on(batch);
        }
        let pinned = self.demo_count();
        let core = &mut self.inner.core;
        let items = &batch.items;
        let targets = core.targets(items)?;
        let obs: Vec<_> = items.iter().map(|t| t.s.to_scalars::<T>()).collect();
        let actions: Vec<usize> = items.iter().map(Transition::executed).collect();
        let weights: Vec<T> = batch.weights.iter().map(|&w| T::of(w)).collect();
        let (mut loss1, mut g1) = loss_and_gradients(&core.nets.q1, &obs, &actions, &targets, &weights)?;
        let (mut loss2, mut g2) = loss_and_gradients(&core.nets.q2, &obs, &actions, &targets, &weights)?;
        let c = self.cfg.lambda_e / items.len() as f64;
        let mut td = Vec::with_capacity(items.len());
        let mut d_q = vec![T::zero(); core.nets.q1.n_actions()];
        for k in 0..items.len() {
            let tr1 = core.nets.q1.trace(&obs[k])?;
            let tr2 = core.nets.q2.trace(&obs[k])?;
            td.push((targets[k] - tr1.q[actions[k]].min(tr2.q[actions[k]])).f64());
            if batch.indices[k] >= pinned {
                continue;
            }
            for (net, trace, grads, loss) in [
                (&core.nets.q1, &tr1, &mut g1, &mut loss1),
                (&core.nets.q2, &tr2, &mut g2, &mut loss2),
            ] {
                let (j, a_max) = margin_loss(&trace.q, actions[k], self.cfg.margin);
                if a_max == actions[k] || j <= 0.0 {
                    continue;
                }
                *loss += c * j;
                d_q.iter_mut().for_each(|d| *d = T::zero());
                d_q[a_max] = T::of(c);
                d_q[actions[k]] = T::of(-c);
                net.backward(trace, &d_q, grads);
            }
        }
        let stats = TrainStats {
            loss1,
            loss2,
            mean_abs_td: td.iter().map(|d| d.abs()).sum::<f64>() / td.len() as f64,
            mean_lambda: 0.0,
            n_intervened: items.iter().filter(|t| t.intervened).count(),
        };
        core.check_finite(&stats, &targets, items)?;
        core.finish_step(&g1, &g2, &batch.indices, &td)?;
        Ok(stats)
    }

    /// Supervised phase on the demonstrations alone.
    pub fn pretrain(&mut self) -> Result<Option<TrainStats>> {
        let mut last = None;
        for _ in 0..self.cfg.pretrain_steps {
            let batch = self.inner.core.sample()?;
            last = Some(self.step_on(&batch)?);
        }
        Ok(last)
    }

    /// Fraction of demonstration states where the greedy action matches the label.
    pub fn demo_agreement(&self) -> Result<f64> {
        let b = &self.inner.core.buffer;
        let n = b.pinned();
        if n == 0 {
            return Ok(0.0);
        }
        let mut hit = 0;
        for i in 0..n {
            let t = b.get(i).expect("pinned slot");
            if self.inner.core.greedy(&t.s)? == t.executed() {
                hit += 1;
            }
        }
        Ok(hit as f64 / n as f64)
    }
}

impl<T: Scalar> Learner for Dqfd<T> {
    fn core_config(&self) -> &AgentConfig {
        &self.inner.core.cfg
    }

    fn act(&mut self, obs: &Observation, epsilon: f64) -> Result<usize> {
        self.inner.core.act(obs, epsilon)
    }

    fn greedy(&self, obs: &Observation) -> Result<usize> {
        self.inner.core.greedy(obs)
    }

    fn remember(&mut self, t: Transition) -> Result<()> {
        self.inner.core.remember(t).map(|_| ())
    }

    fn train(&mut self) -> Result<Option<TrainStats>> {
        if !self.inner.core.ready() {
            return Ok(None);
        }
        let batch = self.inner.core.sample()?;
        self.step_on(&batch).map(Some)
    }

    fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.inner.core.encode(&mut w);
        w.buf
    }

    fn kind(&self) -> &'static str {
        "dqfd"
    }
}

/// Pretrain on `dataset`, then fine-tune online with the demos kept in replay.
pub fn dqfd_run<T: Scalar>(
    dataset: &DemoDataset,
    cfg: DqfdConfig,
    env: &mut TrackEnv,
    total_steps: u64,
    sinks: &mut Sinks<'_>,
) -> Result<(Dqfd<T>, RunReport)> {
    if dataset.is_empty() {
        return Err(Error::DatasetQuality("DQfD needs a non-empty demonstration set".into()));
    }
    let mut learner = Dqfd::new(cfg, dataset)?;
    learner.pretrain()?;
    let report = run_training(env, &mut NoSource, InterventionSchedule::disabled(), &mut learner, total_steps, sinks)?;
    Ok((learner, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_examples() {
        let mut q = vec![0.5f64; 33];
        q[4] = 1.0;
        let (j, a) = margin_loss(&q, 4, 0.8);
        assert!((j - 0.3).abs() < 1e-12);
        assert_ne!(a, 4);
        q[4] = 2.0;
        assert_eq!(margin_loss(&q, 4, 0.8), (0.0, 4));
    }
}
