use serde::{Deserialize, Serialize};

use super::bc::bc_fit;
use super::{BcConfig, BcReport, DemoDataset, DemoRecord};
use crate::approximator::DuelingNet;
use crate::env::TrackEnv;
use crate::error::{Error, Result};
use crate::intervention::ScriptedExpert;
use crate::replay::Transition;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HgDaggerConfig {
    /// Total iterations including the initial behavioral-cloning fit.
    pub iterations: usize,
    pub add_per_iter: usize,
    /// Expert takes over when |cross-track| / half-width exceeds this.
    pub takeover: f64,
    /// ... and hands back once it falls below this.
    pub handback: f64,
    /// Rollout budget per iteration, in steps.
    pub max_rollout_steps: u64,
    pub bc: BcConfig,
}

impl Default for HgDaggerConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            add_per_iter: 300,
            takeover: 0.5,
            handback: 0.25,
            max_rollout_steps: 20_000,
            bc: BcConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HgDaggerReport {
    pub dataset_sizes: Vec<usize>,
    pub takeovers: Vec<usize>,
    pub fits: Vec<BcReport>,
}

/// Human-gated DAgger with the scripted expert as the gatekeeper.
pub fn hg_dagger_run<T: Scalar>(
    initial: &DemoDataset,
    expert: &ScriptedExpert,
    env: &mut TrackEnv,
    cfg: &HgDaggerConfig,
    net: &mut DuelingNet<T>,
) -> Result<(DemoDataset, HgDaggerReport)> {
    if cfg.iterations == 0 {
        return Err(Error::Config("hg_dagger.iterations must be >= 1".into()));
    }
    if initial.is_empty() {
        return Err(Error::DatasetQuality("HG-DAgger needs a non-empty initial dataset".into()));
    }
    let mut data = initial.clone();
    let mut report = HgDaggerReport {
        dataset_sizes: vec![data.len()],
        takeovers: vec![0],
        fits: vec![],
    };
    let samples = |d: &DemoDataset| d.records.iter().map(|r| (r.transition.s, r.label())).collect::<Vec<_>>();
    report.fits.push(bc_fit(net, &samples(&data), &cfg.bc)?);
    for iter in 1..cfg.iterations {
        let mut added = 0usize;
        let mut takeovers = 0usize;
        let mut obs = env.reset();
        let mut expert_driving = false;
        let mut step = 0u64;
        while added < cfg.add_per_iter && step < cfg.max_rollout_steps {
            let ct = obs.cross_track().abs();
            if !expert_driving && ct > cfg.takeover {
                expert_driving = true;
                takeovers += 1;
            } else if expert_driving && ct < cfg.handback {
                expert_driving = false;
            }
            let policy_action = net.greedy(&obs.to_scalars::<T>())?;
            let a = if expert_driving { expert.action(env.state()) } else { policy_action };
            let st = env.step(a)?;
            if expert_driving {
                data.records.push(DemoRecord {
                    episode: env.episode(),
                    step,
                    transition: Transition {
                        s: obs,
                        a_agent: policy_action,
                        a_human: a as i32,
                        r: st.reward.r_total,
                        s_next: st.observation,
                        done: st.crashed,
                        intervened: true,
                        lambda_h: 1.0,
                    },
                    crashed: st.crashed,
                    expert: "expert".into(),
                });
                added += 1;
            }
            obs = st.observation;
            step += 1;
            if st.episode_over() {
                obs = env.reset();
                expert_driving = false;
            }
        }
        if takeovers == 0 {
            log::warn!("HG-DAgger iteration {iter}: expert never took over");
        }
        let bc = BcConfig {
            seed: cfg.bc.seed.wrapping_add(iter as u64),
            ..cfg.bc.clone()
        };
        report.fits.push(bc_fit(net, &samples(&data), &bc)?);
        report.dataset_sizes.push(data.len());
        report.takeovers.push(takeovers);
    }
    Ok((data, report))
}
