use super::{blend_weights, q_combined, AgentConfig, AgentCore, Learner, TrainStats};
use crate::approximator::{DuelingNet, DuelingNetPair, Writer};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::replay::{Sample, Transition};
use crate::scalar::Scalar;

/// Clipped double DQN whose TD estimate blends the human action's Q-value
/// with the agent action's, weighted by the `lambda_h` stored on each
/// transition.
#[derive(Clone, Debug)]
pub struct Iddqn<T> {
    pub core: AgentCore<T>,
}

/// Blended loss of one net. Each sample contributes
/// `w * (y - (c_h * Q(s, a_h) + c_a * Q(s, a_agent)))^2`.
fn blended_loss<T: Scalar>(
    net: &DuelingNet<T>,
    obs: &[[T; crate::env::OBS_DIM]],
    items: &[Transition],
    targets: &[T],
    weights: &[T],
    strict: bool,
) -> Result<(f64, Vec<T>, Vec<Vec<T>>)> {
    let n = items.len();
    let mut grads = vec![T::zero(); net.n_params()];
    let mut qs = Vec::with_capacity(n);
    let scale = T::of(2.0 / n as f64);
    let mut loss = 0.0f64;
    let mut d_q = vec![T::zero(); net.n_actions()];
    for k in 0..n {
        let t = &items[k];
        let trace = net.trace(&obs[k])?;
        let w = weights[k];
        if w == T::zero() {
            qs.push(trace.q);
            continue;
        }
        let (ch, ca) = blend_weights(t.lambda_h, t.intervened, strict);
        let agent = T::of(ca) * trace.q[t.a_agent];
        let est = match t.human() {
            Some(h) if ch != 0.0 => T::of(ch) * trace.q[h] + agent,
            _ => agent,
        };
        let err = targets[k] - est;
        loss += w.f64() * err.f64() * err.f64();
        d_q.iter_mut().for_each(|d| *d = T::zero());
        d_q[t.a_agent] = -scale * w * err * T::of(ca);
        if let Some(h) = t.human() {
            if ch != 0.0 {
                d_q[h] += -scale * w * err * T::of(ch);
            }
        }
        net.backward(&trace, &d_q, &mut grads);
        qs.push(trace.q);
    }
    Ok((loss / n as f64, grads, qs))
}

impl<T: Scalar> Iddqn<T> {
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

    pub fn step_on(&mut self, batch: &Sample<Transition>) -> Result<TrainStats> {
        let core = &mut self.core;
        let strict = core.cfg.strict_paper_blend;
        let items = &batch.items;
        if let Some(t) = items.iter().find(|t| t.intervened && t.human().is_none()) {
            return Err(Error::ContractViolation(format!("intervened transition without human action: {t:?}")));
        }
        let targets = core.targets(items)?;
        let obs: Vec<_> = items.iter().map(|t| t.s.to_scalars::<T>()).collect();
        let weights: Vec<T> = batch.weights.iter().map(|&w| T::of(w)).collect();
        let (loss1, g1, qs1) = blended_loss(&core.nets.q1, &obs, items, &targets, &weights, strict)?;
        let (loss2, g2, qs2) = blended_loss(&core.nets.q2, &obs, items, &targets, &weights, strict)?;
        let mut td = Vec::with_capacity(items.len());
        for (k, t) in items.iter().enumerate() {
            let (h1, h2) = match t.human() {
                Some(h) => (qs1[k][h], qs2[k][h]),
                None => (T::zero(), T::zero()),
            };
            let qc = q_combined(h1, h2, qs1[k][t.a_agent], qs2[k][t.a_agent], t.lambda_h, t.intervened, strict);
            td.push((targets[k] - qc).f64());
        }
        let stats = TrainStats {
            loss1,
            loss2,
            mean_abs_td: td.iter().map(|d| d.abs()).sum::<f64>() / td.len() as f64,
            mean_lambda: items.iter().map(|t| t.lambda_h).sum::<f64>() / items.len() as f64,
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

impl<T: Scalar> Learner for Iddqn<T> {
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
        "iddqn"
    }
}
