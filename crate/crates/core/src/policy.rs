//! Action selectors and greedy evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::DuelingNet;
use crate::env::{EpisodeStatus, Observation, SimState, TrackEnv, N_ACTIONS};
use crate::error::{Error, Result};
use crate::intervention::ScriptedExpert;
use crate::scalar::Scalar;

/// Maps an observation to an action. `state` is absent when rolling out
/// inside a learned model.
pub trait Policy {
    fn action(&mut self, obs: &Observation, state: Option<&SimState>) -> Result<usize>;
}

/// Argmax of a Q-network.
pub struct Greedy<'a, T>(pub &'a DuelingNet<T>);

impl<T: Scalar> Policy for Greedy<'_, T> {
    fn action(&mut self, obs: &Observation, _: Option<&SimState>) -> Result<usize> {
        self.0.greedy(&obs.to_scalars::<T>())
    }
}

impl Policy for ScriptedExpert {
    fn action(&mut self, _: &Observation, state: Option<&SimState>) -> Result<usize> {
        let state = state.ok_or_else(|| Error::ContractViolation("the scripted expert needs the simulator state".into()))?;
        Ok(ScriptedExpert::action(self, state))
    }
}

/// Uniformly random actions from a seeded stream.
pub struct RandomPolicy(pub ChaCha8Rng);

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Policy for RandomPolicy {
    fn action(&mut self, _: &Observation, _: Option<&SimState>) -> Result<usize> {
        Ok(self.0.gen_range(0..N_ACTIONS))
    }
}

impl<P: Policy + ?Sized> Policy for &mut P {
    fn action(&mut self, obs: &Observation, state: Option<&SimState>) -> Result<usize> {
        (**self).action(obs, state)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn action(&mut self, obs: &Observation, state: Option<&SimState>) -> Result<usize> {
        (**self).action(obs, state)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env_id: String,
    pub rewards: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `rewards`.
    pub std: f64,
    pub successes: usize,
    pub crashes: usize,
}

impl EvalReport {
    pub fn from_rewards(env_id: &str, rewards: Vec<f64>, successes: usize, crashes: usize) -> Self {
        let n = rewards.len().max(1) as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        Self {
            env_id: env_id.to_string(),
            mean,
            std: var.sqrt(),
            rewards,
            successes,
            crashes,
        }
    }
}

/// Run `episodes` complete episodes under `policy`.
pub fn evaluate<P: Policy + ?Sized>(policy: &mut P, env: &mut TrackEnv, episodes: usize) -> Result<EvalReport> {
    let mut rewards = Vec::with_capacity(episodes);
    let (mut successes, mut crashes) = (0, 0);
    for _ in 0..episodes {
        let mut obs = env.reset();
        loop {
            let a = policy.action(&obs, Some(env.state()))?;
            let st = env.step(a)?;
            obs = st.observation;
            if st.episode_over() {
                rewards.push(st.cumulative_reward);
                match st.status {
                    EpisodeStatus::Success => successes += 1,
                    EpisodeStatus::Failure => crashes += 1,
                    EpisodeStatus::Continue => {}
                }
                break;
            }
        }
    }
    Ok(EvalReport::from_rewards(&env.track().spec().name, rewards, successes, crashes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::track::{loop_track, Track};
    use std::sync::Arc;

    #[test]
    fn expert_beats_random() {
        let track = Arc::new(Track::new(loop_track(0)).unwrap());
        let mut env = TrackEnv::new(track.clone(), EnvConfig::default(), 4).unwrap();
        let e = evaluate(&mut ScriptedExpert::new(track), &mut env, 3).unwrap();
        let r = evaluate(&mut RandomPolicy::new(1), &mut env, 3).unwrap();
        assert_eq!(e.successes, 3);
        assert!(e.mean > r.mean);
        let one = EvalReport::from_rewards("x", vec![4.0], 0, 0);
        assert_eq!(one.std, 0.0);
    }
}
