use super::{AgentConfig, AgentCore, Learner, TrainStats};
use crate::approximator::{loss_and_gradients, DuelingNetPair, Writer};
use crate::env::Observation;
use crate::error::Result;
use crate::replay::{Sample, Transition};
use crate::scalar::Scalar;

/// Clipped double DQN with a dueling net pair and prioritized replay. Each
/// net regresses its own Q-value of the executed action onto the shared
/// clipped target.
#[derive(Clone, Debug)]
pub struct ClippedDdqn<T> {
    pub core: AgentCore<T>,
}

impl<T: Scalar> ClippedDdqn<T> {
    pub fn new(cfg: AgentConfig) -> Result<Self> {
        Ok(Self {
            core: AgentCore::new(cfg)?,
        })
    }

    pub fn with_nets(cfg: AgentConfig, nets: DuelingNetPair<T>) -> Result<Self> {
        Ok(Self {
            core: AgentCore::with_nets(cfg, nets)?,
        })
    }

    /// Update from an already drawn batch.
    pub fn step_on(&mut self, batch: &Sample<Transition>) -> Result<TrainStats> {
        let core = &mut self.core;
        let items = &batch.items;
        let targets = core.targets(items)?;
        let obs: Vec<_> = items.iter().map(|t| t.s.to_scalars::<T>()).collect();
        let actions: Vec<usize> = items.iter().map(Transition::executed).collect();
        let weights: Vec<T> = batch.weights.iter().map(|&w| T::of(w)).collect();
        let (loss1, g1) = loss_and_gradients(&core.nets.q1, &obs, &actions, &targets, &weights)?;
        let (loss2, g2) = loss_and_gradients(&core.nets.q2, &obs, &actions, &targets, &weights)?;
        let mut td = Vec::with_capacity(items.len());
        for k in 0..items.len() {
            let q1 = core.nets.q1.q_values(&obs[k])?[actions[k]];
            let q2 = core.nets.q2.q_values(&obs[k])?[actions[k]];
            td.push((targets[k] - q1.min(q2)).f64());
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

    pub fn train_step(&mut self) -> Result<Option<TrainStats>> {
        if !self.core.ready() {
            return Ok(None);
        }
        let batch = self.core.sample()?;
        self.step_on(&batch).map(Some)
    }
}

impl<T: Scalar> Learner for ClippedDdqn<T> {
    fn core_config(&self) -> &AgentConfig {
        &self.core.cfg
    }

    fn act(&mut self, obs: &Observation, epsilon: f64) -> Result<usize> {
        self.core.act(obs, epsilon)
    }

    fn greedy(&self, obs: &Observation) -> Result<usize> {
        self.core.greedy(obs)
    }

    fn remember(&mut self, t: Transition) -> Result<()> {
        self.core.remember(t).map(|_| ())
    }

    fn train(&mut self) -> Result<Option<TrainStats>> {
        self.train_step()
    }

    fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.core.encode(&mut w);
        w.buf
    }

    fn kind(&self) -> &'static str {
        "ddqn"
    }
}
