//! `eval`: greedy roll-outs of a checkpointed policy.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use iddqn::approximator::DuelingNet;
use iddqn::checkpoint::Checkpoint;
use iddqn::env::{Observation, SimState, N_ACTIONS, OBS_DIM};
use iddqn::policy::{evaluate, EvalReport, Greedy, Policy};
use iddqn::track::Track;
use iddqn::Scalar;

use crate::config::RunConfig;
use crate::error::{HarnessError, HarnessResult};
use crate::train::{CHECKPOINT_DIR, CONFIG_FILE, EVAL_SEED_OFFSET};

/// Greedy policy over a checkpointed network of either width.
pub enum LoadedPolicy {
    F32(DuelingNet<f32>),
    F64(DuelingNet<f64>),
}

fn check_architecture<T: Scalar>(net: &DuelingNet<T>, path: &Path) -> HarnessResult<()> {
    if net.input_dim() != OBS_DIM || net.n_actions() != N_ACTIONS {
        return Err(HarnessError::Config(format!(
            "{}: architecture mismatch: network maps {} inputs to {} actions, expected {OBS_DIM} -> {N_ACTIONS}",
            path.display(),
            net.input_dim(),
            net.n_actions()
        )));
    }
    Ok(())
}

impl LoadedPolicy {
    pub fn load(path: &Path) -> HarnessResult<Self> {
        let ck = Checkpoint::load(path).map_err(HarnessError::input)?;
        let p = match ck.width {
            4 => LoadedPolicy::F32(ck.policy_net::<f32>().map_err(HarnessError::input)?),
            8 => LoadedPolicy::F64(ck.policy_net::<f64>().map_err(HarnessError::input)?),
            w => {
                return Err(HarnessError::Config(format!(
                    "{}: unsupported float width {w}",
                    path.display()
                )))
            }
        };
        match &p {
            LoadedPolicy::F32(n) => check_architecture(n, path)?,
            LoadedPolicy::F64(n) => check_architecture(n, path)?,
        }
        Ok(p)
    }
}

impl Policy for LoadedPolicy {
    fn action(&mut self, obs: &Observation, state: Option<&SimState>) -> iddqn::Result<usize> {
        match self {
            LoadedPolicy::F32(n) => Greedy(n).action(obs, state),
            LoadedPolicy::F64(n) => Greedy(n).action(obs, state),
        }
    }
}

/// The run directory a checkpoint belongs to.
pub fn run_dir_of(checkpoint: &Path) -> PathBuf {
    let parent = checkpoint.parent().unwrap_or(Path::new("."));
    if parent.file_name().is_some_and(|n| n == CHECKPOINT_DIR) {
        parent.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        parent.to_path_buf()
    }
}

/// The config persisted next to a checkpoint, if any.
pub fn config_near(checkpoint: &Path) -> HarnessResult<Option<RunConfig>> {
    let path = run_dir_of(checkpoint).join(CONFIG_FILE);
    if path.exists() {
        RunConfig::load(&path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn eval(checkpoint: &Path, cfg: &RunConfig, track: Arc<Track>, episodes: usize) -> HarnessResult<EvalReport> {
    if episodes == 0 {
        return Err(HarnessError::Config("episodes: must be >= 1".into()));
    }
    let mut policy = LoadedPolicy::load(checkpoint)?;
    let mut env = cfg.env_for(track, cfg.run.seed.wrapping_add(EVAL_SEED_OFFSET))?;
    Ok(evaluate(&mut policy, &mut env, episodes)?)
}
