//! Imitation and demonstration baselines: BC, DQfD and HG-DAgger.

mod bc;
mod dqfd;
mod hg_dagger;

pub use bc::{bc_accuracy, bc_train, BcConfig, BcReport};
pub use dqfd::{dqfd_run, margin_loss, Dqfd, DqfdConfig};
pub use hg_dagger::{hg_dagger_run, HgDaggerConfig, HgDaggerReport};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EpisodeStatus, TrackEnv};
use crate::error::{Error, Result};
use crate::intervention::InterventionSource;
use crate::replay::{read_jsonl, write_jsonl, Transition};

pub const DEMO_SCHEMA: &str = "iddqn.demos";

/// Evaluative-store record plus the tag of the expert that labeled it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub episode: u64,
    pub step: u64,
    pub transition: Transition,
    pub crashed: bool,
    pub expert: String,
}

impl DemoRecord {
    /// Expert label of this record.
    pub fn label(&self) -> usize {
        self.transition.executed()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub expert: String,
    pub seed: u64,
    pub track: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DemoDataset {
    pub meta: DemoMeta,
    pub records: Vec<DemoRecord>,
}

impl DemoDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            r.transition.validate()?;
            if !r.transition.intervened {
                return Err(Error::DatasetQuality(format!(
                    "record at step {} carries no expert label",
                    r.step
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(&self.meta).map_err(|e| Error::InternalFault(e.to_string()))?;
        write_jsonl(path, DEMO_SCHEMA, meta, &self.records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, records) = read_jsonl(path, DEMO_SCHEMA)?;
        let meta = serde_json::from_value(meta).map_err(|e| Error::storage(path, e))?;
        let ds = Self { meta, records };
        ds.validate().map_err(|e| Error::storage(path, e))?;
        Ok(ds)
    }
}

/// A labeled transition where the expert both chose and executed `action`.
pub fn expert_transition(t: Transition, action: usize) -> Transition {
    Transition {
        a_agent: action,
        a_human: action as i32,
        intervened: true,
        lambda_h: 1.0,
        ..t
    }
}

/// Roll the expert for `n` transitions, resetting between episodes.
pub fn collect_demonstrations(
    expert: &mut dyn InterventionSource,
    env: &mut TrackEnv,
    n: usize,
    seed: u64,
) -> Result<DemoDataset> {
    if n == 0 {
        return Err(Error::Config("demo count must be >= 1".into()));
    }
    let mut records = Vec::with_capacity(n);
    let mut obs = env.reset();
    let (mut episodes, mut crashes) = (0usize, 0usize);
    for step in 0..n as u64 {
        let state = *env.state();
        let a = expert
            .poll(step, &obs, &state)?
            .ok_or_else(|| Error::DatasetQuality(format!("expert declined to act at step {step}")))?;
        let st = env.step(a)?;
        let t = Transition {
            s: obs,
            a_agent: a,
            a_human: a as i32,
            r: st.reward.r_total,
            s_next: st.observation,
            done: st.crashed,
            intervened: true,
            lambda_h: 1.0,
        };
        records.push(DemoRecord {
            episode: env.episode(),
            step,
            transition: t,
            crashed: st.crashed,
            expert: expert.tag().to_string(),
        });
        obs = st.observation;
        if st.episode_over() {
            episodes += 1;
            if st.status == EpisodeStatus::Failure {
                crashes += 1;
            }
            obs = env.reset();
        }
    }
    if episodes > 0 && crashes * 2 > episodes {
        return Err(Error::DatasetQuality(format!(
            "expert crashed in {crashes} of {episodes} episodes; check its configuration"
        )));
    }
    Ok(DemoDataset {
        meta: DemoMeta {
            expert: expert.tag().to_string(),
            seed,
            track: env.track().spec().name.clone(),
        },
        records,
    })
}
