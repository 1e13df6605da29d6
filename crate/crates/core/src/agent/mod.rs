//! Interactive clipped double DQN and its vanilla counterpart.

mod ddqn;
mod iddqn;
mod run;

pub use ddqn::ClippedDdqn;
pub use iddqn::Iddqn;
pub use run::{
    mean_return_after, run_training, EpisodeMetrics, NullObserver, RunObserver, RunReport, Sinks, StepSnapshot,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{argmax, soft_update, AdamConfig, AdamState, DuelingNet, DuelingNetPair, Reader, Writer};
use crate::env::{Observation, N_ACTIONS};
use crate::error::{Error, Result};
use crate::replay::{PerConfig, PriorityBuffer, Sample, Transition};
use crate::scalar::Scalar;

/// Weight `lambda_h` on the human action's Q-value as a function of the step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HumanWeightSchedule {
    Constant { lambda: f64 },
    LinearDecay { start: f64, end: f64, over_steps: u64 },
}

impl Default for HumanWeightSchedule {
    fn default() -> Self {
        Self::LinearDecay {
            start: 1.0,
            end: 0.0,
            over_steps: 40_000,
        }
    }
}

impl HumanWeightSchedule {
    pub fn constant(lambda: f64) -> Self {
        Self::Constant { lambda }
    }

    pub fn decay(over_steps: u64) -> Self {
        Self::LinearDecay {
            start: 1.0,
            end: 0.0,
            over_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        match *self {
            Self::Constant { lambda } if !unit(lambda) => {
                Err(Error::Config(format!("agent.schedule.lambda must lie in [0, 1], got {lambda}")))
            }
            Self::LinearDecay { start, end, .. } if !unit(start) || !unit(end) || end > start => Err(Error::Config(
                format!("agent.schedule needs 1 >= start >= end >= 0, got start={start} end={end}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        match *self {
            Self::Constant { lambda } => lambda,
            Self::LinearDecay { start, end, over_steps } => {
                if step >= over_steps {
                    end
                } else {
                    start + (end - start) * (step as f64 / over_steps as f64)
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Self::Constant { lambda } => format!("{lambda}"),
            Self::LinearDecay { .. } => "decay".into(),
        }
    }
}

/// Online net whose argmax picks the bootstrap action.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgmaxNet {
    #[default]
    Q1,
    Q2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub batch_size: usize,
    /// Train once every this many environment steps.
    pub train_every: u64,
    pub tau: f64,
    pub lr: f64,
    pub nadam: bool,
    pub epsilon_init: f64,
    /// Linear decrease of epsilon per environment step.
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    /// No updates until the buffer holds this many transitions.
    pub learning_starts: usize,
    pub initial_priority: f64,
    pub schedule: HumanWeightSchedule,
    pub strict_paper_blend: bool,
    pub argmax_net: ArgmaxNet,
    pub replay: PerConfig,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 32,
            train_every: 4,
            tau: 0.0075,
            lr: 0.00025,
            nadam: false,
            epsilon_init: 1.0,
            epsilon_decay: 1e-4,
            epsilon_floor: 0.05,
            learning_starts: 1000,
            initial_priority: 1.0,
            schedule: HumanWeightSchedule::default(),
            strict_paper_blend: true,
            argmax_net: ArgmaxNet::Q1,
            replay: PerConfig::default(),
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("agent.gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("agent.tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 || self.train_every == 0 {
            return Err(Error::Config("agent.batch_size and agent.train_every must be > 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("agent.lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.epsilon_floor)
            || !(self.epsilon_floor..=1.0).contains(&self.epsilon_init)
            || !(self.epsilon_decay >= 0.0)
        {
            return Err(Error::Config("agent.epsilon_* must satisfy 0 <= floor <= init <= 1, decay >= 0".into()));
        }
        if !(self.initial_priority > 0.0) {
            return Err(Error::Config("agent.initial_priority must be > 0".into()));
        }
        self.schedule.validate()?;
        self.replay.validate()
    }

    pub fn epsilon(&self, step: u64) -> f64 {
        (self.epsilon_init - self.epsilon_decay * step as f64).max(self.epsilon_floor)
    }

    fn adam(&self) -> AdamConfig {
        if self.nadam {
            AdamConfig::nadam(self.lr)
        } else {
            AdamConfig::with_lr(self.lr)
        }
    }
}

/// Epsilon-greedy over `net`. Exactly one uniform draw is consumed per call,
/// plus one action draw when exploring.
pub fn select_action<T: Scalar, R: Rng>(obs: &[T], epsilon: f64, net: &DuelingNet<T>, rng: &mut R) -> Result<usize> {
    let u: f64 = rng.gen();
    if u < epsilon {
        Ok(rng.gen_range(0..N_ACTIONS))
    } else {
        net.greedy(obs)
    }
}

/// Executed action: the human's when intervening, otherwise the agent's.
pub fn blend_action(a_agent: usize, a_human: Option<usize>, intervened: bool) -> Result<usize> {
    match (intervened, a_human) {
        (false, _) => Ok(a_agent),
        (true, Some(a)) if a < N_ACTIONS => Ok(a),
        (true, Some(a)) => Err(Error::ContractViolation(format!("human action {a} out of range"))),
        (true, None) => Err(Error::ContractViolation("intervened without a human action".into())),
    }
}

/// Coefficients `(human, agent)` multiplying the human- and agent-action
/// Q-values in the blended estimate.
pub fn blend_weights(lambda_h: f64, intervened: bool, strict_paper_blend: bool) -> (f64, f64) {
    match (intervened, strict_paper_blend) {
        (true, _) => (lambda_h, 1.0 - lambda_h),
        (false, true) => (0.0, 1.0 - lambda_h),
        (false, false) => (0.0, 1.0),
    }
}

pub fn q_combined<T: Scalar>(
    q1_h: T,
    q2_h: T,
    q1_a: T,
    q2_a: T,
    lambda_h: f64,
    intervened: bool,
    strict_paper_blend: bool,
) -> T {
    let (ch, ca) = blend_weights(lambda_h, intervened, strict_paper_blend);
    let agent = T::of(ca) * q1_a.min(q2_a);
    if ch == 0.0 {
        agent
    } else {
        T::of(ch) * q1_h.min(q2_h) + agent
    }
}

/// `r + gamma * min(t1, t2) * (1 - done)`, with `t1`, `t2` the target nets'
/// values at the online argmax of the next state.
pub fn q_target<T: Scalar>(r: T, t1: T, t2: T, done: bool, gamma: T) -> T {
    if done {
        r
    } else {
        r + gamma * t1.min(t2)
    }
}

pub fn td_error<T: Scalar>(q_target: T, q_combined: T) -> T {
    q_target - q_combined
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub loss1: f64,
    pub loss2: f64,
    pub mean_abs_td: f64,
    pub mean_lambda: f64,
    pub n_intervened: usize,
}

/// Network, optimizer and replay state common to every value-based learner.
#[derive(Clone, Debug)]
pub struct AgentCore<T> {
    pub cfg: AgentConfig,
    pub nets: DuelingNetPair<T>,
    pub opt1: AdamState<T>,
    pub opt2: AdamState<T>,
    pub buffer: PriorityBuffer<Transition>,
    pub act_rng: ChaCha8Rng,
    pub sample_rng: ChaCha8Rng,
    pub train_steps: u64,
}

impl<T: Scalar> AgentCore<T> {
    pub fn new(cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let nets = DuelingNetPair::new(cfg.seed);
        Self::with_nets(cfg, nets)
    }

    pub fn with_nets(cfg: AgentConfig, nets: DuelingNetPair<T>) -> Result<Self> {
        cfg.validate()?;
        let n = nets.q1.n_params();
        Ok(Self {
            opt1: AdamState::new(n, cfg.adam()),
            opt2: AdamState::new(n, cfg.adam()),
            buffer: PriorityBuffer::new(cfg.replay)?,
            act_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xac7_10f5),
            sample_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a3_91e5),
            train_steps: 0,
            nets,
            cfg,
        })
    }

    pub fn act(&mut self, obs: &Observation, epsilon: f64) -> Result<usize> {
        select_action(&obs.to_scalars::<T>(), epsilon, &self.nets.q1, &mut self.act_rng)
    }

    pub fn greedy(&self, obs: &Observation) -> Result<usize> {
        self.nets.q1.greedy(&obs.to_scalars::<T>())
    }

    pub fn remember(&mut self, t: Transition) -> Result<usize> {
        self.buffer.push(t, self.cfg.initial_priority)
    }

    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.cfg.batch_size.max(self.cfg.learning_starts)
    }

    pub fn sample(&mut self) -> Result<Sample<Transition>> {
        self.buffer.sample(self.cfg.batch_size, &mut self.sample_rng)
    }

    /// Clipped double-Q targets for each transition.
    pub fn targets(&self, items: &[Transition]) -> Result<Vec<T>> {
        let gamma = T::of(self.cfg.gamma);
        let chooser = match self.cfg.argmax_net {
            ArgmaxNet::Q1 => &self.nets.q1,
            ArgmaxNet::Q2 => &self.nets.q2,
        };
        items
            .iter()
            .map(|t| {
                let r = T::of(t.r);
                if t.done {
                    return Ok(q_target(r, T::zero(), T::zero(), true, gamma));
                }
                let s2 = t.s_next.to_scalars::<T>();
                let a_star = argmax(&chooser.q_values(&s2)?);
                let t1 = self.nets.target1.q_values(&s2)?[a_star];
                let t2 = self.nets.target2.q_values(&s2)?[a_star];
                Ok(q_target(r, t1, t2, false, gamma))
            })
            .collect()
    }

    /// Apply both gradients, refresh priorities and move the targets.
    pub fn finish_step(&mut self, g1: &[T], g2: &[T], indices: &[usize], td: &[f64]) -> Result<()> {
        self.opt1.step(self.nets.q1.params_mut(), g1)?;
        self.opt2.step(self.nets.q2.params_mut(), g2)?;
        self.buffer.update_priorities(indices, td)?;
        let tau = T::of(self.cfg.tau);
        soft_update(self.nets.target1.params_mut(), self.nets.q1.params(), tau)?;
        soft_update(self.nets.target2.params_mut(), self.nets.q2.params(), tau)?;
        self.train_steps += 1;
        Ok(())
    }

    pub fn check_finite(&self, stats: &TrainStats, targets: &[T], items: &[Transition]) -> Result<()> {
        if stats.loss1.is_finite() && stats.loss2.is_finite() {
            return Ok(());
        }
        let worst = targets
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.f64().abs().total_cmp(&b.1.f64().abs()))
            .map(|(i, t)| format!("largest |target| {t} at batch index {i} (r={})", items[i].r))
            .unwrap_or_default();
        Err(Error::TrainingFault(format!(
            "non-finite loss at train step {} (loss1={}, loss2={}); {worst}",
            self.train_steps, stats.loss1, stats.loss2
        )))
    }

    pub fn encode(&self, w: &mut Writer) {
        w.dueling(&self.nets.q1);
        w.dueling(&self.nets.q2);
        w.dueling(&self.nets.target1);
        w.dueling(&self.nets.target2);
        w.adam(&self.opt1);
        w.adam(&self.opt2);
        w.u64(self.train_steps);
    }

    /// Restore nets, optimizers and counters written by [`AgentCore::encode`].
    pub fn decode_into(&mut self, r: &mut Reader<'_>) -> Result<()> {
        let q1 = r.dueling()?;
        let q2 = r.dueling()?;
        let target1 = r.dueling()?;
        let target2 = r.dueling()?;
        for n in [&q2, &target1, &target2] {
            if !n.same_architecture(&q1) {
                return Err(Error::Config("checkpoint nets disagree on architecture".into()));
            }
        }
        if !q1.same_architecture(&self.nets.q1) {
            return Err(Error::Config(format!(
                "checkpoint architecture {:?} x {} does not match {:?} x {}",
                q1.trunk_sizes(),
                q1.n_actions(),
                self.nets.q1.trunk_sizes(),
                self.nets.q1.n_actions()
            )));
        }
        self.nets = DuelingNetPair { q1, q2, target1, target2 };
        self.opt1 = r.adam()?;
        self.opt2 = r.adam()?;
        self.train_steps = r.u64()?;
        Ok(())
    }
}

/// Anything [`run_training`] can drive.
pub trait Learner {
    fn core_config(&self) -> &AgentConfig;

    fn act(&mut self, obs: &Observation, epsilon: f64) -> Result<usize>;

    fn greedy(&self, obs: &Observation) -> Result<usize>;

    fn remember(&mut self, t: Transition) -> Result<()>;

    /// One gradient step, or `None` while the buffer is not ready.
    fn train(&mut self) -> Result<Option<TrainStats>>;

    /// Binary snapshot of all learnable state.
    fn snapshot(&self) -> Vec<u8>;

    fn kind(&self) -> &'static str;
}
