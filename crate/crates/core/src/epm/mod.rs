//! Offline evaluation of human interventions.
//!
//! For each intervention the module rolls the agent forward from the onset
//! state, first with the action it had proposed and then greedily, through
//! either the true simulator or a learned dynamics model plus crash
//! classifier. The human's logged return over the same horizon is compared
//! with the counterfactual one.

mod models;

pub use models::{
    classifier_metrics, samples_from_records, train_classifier, train_predictive, ClassifierMetrics, CrashClassifier,
    EpmSample, PredictiveMetrics, PredictiveModel, CLASSIFIER_IN, PREDICTIVE_IN, PREDICTIVE_OUT,
};

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::approximator::{Reader, Writer};
use crate::env::{observe, step, Observation, RewardConfig, SimState};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::replay::{read_jsonl, write_jsonl, EvalRecord};
use crate::scalar::Scalar;
use crate::track::Track;

pub const VERDICT_SCHEMA: &str = "iddqn.epm.verdicts";
const MODEL_MAGIC: &[u8; 8] = b"IDDQNEPM";
const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpmConfig {
    pub horizon: usize,
    pub predictive_lr: f64,
    pub classifier_lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    /// Std of the Gaussian noise added to model inputs while training.
    pub input_noise: f64,
    pub predictive_epochs: usize,
    pub classifier_epochs: usize,
    pub threshold: f64,
    pub oracle_mode: bool,
    /// Also run the single global comparison over the whole store.
    pub global_mode: bool,
    pub holdout: f64,
    pub crash_min_fraction: f64,
    pub min_samples: usize,
    pub seed: u64,
}

impl Default for EpmConfig {
    fn default() -> Self {
        Self {
            horizon: 4,
            predictive_lr: 2e-4,
            classifier_lr: 5e-4,
            batch_size: 64,
            dropout: 0.4,
            input_noise: 0.1,
            predictive_epochs: 20,
            classifier_epochs: 20,
            threshold: 0.5,
            oracle_mode: false,
            global_mode: false,
            holdout: 0.2,
            crash_min_fraction: 0.2,
            min_samples: 1000,
            seed: 0,
        }
    }
}

impl EpmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.horizon == 0 {
            return bad("epm.horizon must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("epm.batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("epm.dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.input_noise >= 0.0) {
            return bad(format!("epm.input_noise must be >= 0, got {}", self.input_noise));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("epm.holdout must be in [0, 1), got {}", self.holdout));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("epm.threshold must be in [0, 1], got {}", self.threshold));
        }
        if !(0.0..1.0).contains(&self.crash_min_fraction) {
            return bad(format!("epm.crash_min_fraction must be in [0, 1), got {}", self.crash_min_fraction));
        }
        if !(self.predictive_lr > 0.0 && self.classifier_lr > 0.0) {
            return bad("epm learning rates must be > 0".into());
        }
        Ok(())
    }
}

/// Result of one simulated transition.
#[derive(Clone, Debug, PartialEq)]
pub struct SimStep<S> {
    pub next: S,
    pub reward: f64,
    pub crashed: bool,
}

/// Something a counterfactual rollout can be stepped through.
pub trait Dynamics {
    type State: Clone;
    fn start(&self, rec: &EvalRecord) -> Result<Self::State>;
    fn observation(&self, s: &Self::State) -> Observation;
    fn sim<'a>(&self, s: &'a Self::State) -> Option<&'a SimState>;
    fn step(&self, s: &Self::State, action: usize) -> Result<SimStep<Self::State>>;
}

/// The true simulator; needs stores logged with simulator states.
#[derive(Clone, Debug)]
pub struct OracleDynamics {
    pub track: Arc<Track>,
    pub reward: RewardConfig,
    pub dt: f64,
}

impl Dynamics for OracleDynamics {
    type State = SimState;

    fn start(&self, rec: &EvalRecord) -> Result<SimState> {
        rec.sim.ok_or_else(|| {
            Error::Config(format!(
                "record at step {} has no simulator state; oracle mode needs a store logged with states",
                rec.step
            ))
        })
    }

    fn observation(&self, s: &SimState) -> Observation {
        observe(s, &self.track)
    }

    fn sim<'a>(&self, s: &'a SimState) -> Option<&'a SimState> {
        Some(s)
    }

    fn step(&self, s: &SimState, action: usize) -> Result<SimStep<SimState>> {
        let out = step(s, action, &self.track, &self.reward, self.dt)?;
        Ok(SimStep {
            next: out.state,
            reward: out.reward.r_total,
            crashed: out.crashed,
        })
    }
}

/// Trained predictive model and crash classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct EpmModels<T> {
    pub predictive: PredictiveModel<T>,
    pub classifier: CrashClassifier<T>,
}

impl<T: Scalar> EpmModels<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.u8(T::WIDTH);
        self.predictive.encode(&mut w);
        self.classifier.encode(&mut w);
        w.buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        if r.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
            return Err(Error::Config("not an EPM model file".into()));
        }
        let v = r.u32()?;
        if v != MODEL_VERSION {
            return Err(Error::Config(format!("EPM model version {v} unsupported (expected {MODEL_VERSION})")));
        }
        let width = r.u8()?;
        if width != T::WIDTH {
            return Err(Error::Config(format!("EPM model stored with {width}-byte floats, expected {}", T::WIDTH)));
        }
        let predictive = PredictiveModel::decode(&mut r)?;
        let classifier = CrashClassifier::decode(&mut r)?;
        if !r.is_done() {
            return Err(Error::Config("trailing bytes after EPM models".into()));
        }
        Ok(Self { predictive, classifier })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::storage(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::storage(path, e))?;
        Self::from_bytes(&buf).map_err(|e| Error::storage(path, e))
    }
}

impl<T: Scalar> Dynamics for EpmModels<T> {
    type State = Observation;

    fn start(&self, rec: &EvalRecord) -> Result<Observation> {
        Ok(rec.transition.s)
    }

    fn observation(&self, s: &Observation) -> Observation {
        *s
    }

    fn sim<'a>(&self, _: &'a Observation) -> Option<&'a SimState> {
        None
    }

    fn step(&self, s: &Observation, action: usize) -> Result<SimStep<Observation>> {
        let (next, reward) = self.predictive.predict(s, action)?;
        let crashed = self.classifier.crashed(s, &next)?;
        Ok(SimStep { next, reward, crashed })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// Accumulated reward, or exactly -1 if the rollout crashed.
    pub sum_r_agent: f64,
    pub crashed: bool,
    pub rewards: Vec<f64>,
    pub actions: Vec<usize>,
}

/// Roll `horizon` steps from `start`: `first_action`, then `policy`.
pub fn counterfactual_rollout<D: Dynamics, P: Policy + ?Sized>(
    dynamics: &D,
    start: D::State,
    first_action: usize,
    policy: &mut P,
    horizon: usize,
) -> Result<Rollout> {
    if horizon == 0 {
        return Err(Error::Config("rollout horizon must be >= 1".into()));
    }
    let mut s = start;
    let mut a = first_action;
    let mut out = Rollout {
        sum_r_agent: 0.0,
        crashed: false,
        rewards: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
    };
    for j in 0..horizon {
        let st = dynamics.step(&s, a)?;
        out.actions.push(a);
        if st.crashed {
            out.sum_r_agent = -1.0;
            out.crashed = true;
            break;
        }
        out.sum_r_agent += st.reward;
        out.rewards.push(st.reward);
        s = st.next;
        if j + 1 < horizon {
            a = policy.action(&dynamics.observation(&s), dynamics.sim(&s))?;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpmVerdict {
    pub window: usize,
    pub episode: u64,
    pub onset_step: u64,
    /// Intervened steps in the window.
    pub length: usize,
    pub horizon: usize,
    pub sum_r_human: f64,
    pub sum_r_agent: f64,
    pub agent_crashed: bool,
    pub agrees: bool,
}

/// Single global comparison: every intervened step starts a
/// rollout whose rewards feed one shared agent sum (a crash resets it to -1),
/// and every non-intervened step adds its logged reward to the human sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalComparison {
    pub sum_r_agent: f64,
    pub sum_r_human: f64,
    pub rollouts: usize,
    pub agrees: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpmSummary {
    pub mode: String,
    pub horizon: usize,
    pub n_windows: usize,
    /// `None` when the store holds no interventions.
    pub agreement_rate: Option<f64>,
    pub mean_sum_r_human: Option<f64>,
    pub mean_sum_r_agent: Option<f64>,
    pub agent_crashes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<GlobalComparison>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpmReport {
    pub summary: EpmSummary,
    pub verdicts: Vec<EpmVerdict>,
}

impl EpmReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(&self.summary).map_err(|e| Error::InternalFault(e.to_string()))?;
        write_jsonl(path, VERDICT_SCHEMA, meta, &self.verdicts)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, verdicts) = read_jsonl(path, VERDICT_SCHEMA)?;
        let summary = serde_json::from_value(meta).map_err(|e| Error::storage(path, e))?;
        Ok(Self { summary, verdicts })
    }
}

/// Maximal runs of intervened records within one episode, as index ranges.
pub fn intervention_windows(records: &[EvalRecord]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < records.len() {
        if !records[i].transition.intervened {
            i += 1;
            continue;
        }
        let start = i;
        i += 1;
        while i < records.len()
            && records[i].transition.intervened
            && records[i].episode == records[i - 1].episode
            && records[i].step == records[i - 1].step + 1
        {
            i += 1;
        }
        out.push(start..i);
    }
    out
}

/// One verdict per intervention window over `min(window length, horizon)` steps.
pub fn evaluate_interventions<D: Dynamics, P: Policy + ?Sized>(
    records: &[EvalRecord],
    dynamics: &D,
    policy: &mut P,
    cfg: &EpmConfig,
) -> Result<EpmReport> {
    cfg.validate()?;
    let mut verdicts = Vec::new();
    for (w, range) in intervention_windows(records).into_iter().enumerate() {
        let onset = &records[range.start];
        let h = range.len().min(cfg.horizon);
        let sum_r_human: f64 = records[range.start..range.start + h].iter().map(|r| r.transition.r).sum();
        let start = dynamics.start(onset)?;
        let ro = counterfactual_rollout(dynamics, start, onset.transition.a_agent, policy, h)?;
        verdicts.push(EpmVerdict {
            window: w,
            episode: onset.episode,
            onset_step: onset.step,
            length: range.len(),
            horizon: h,
            sum_r_human,
            sum_r_agent: ro.sum_r_agent,
            agent_crashed: ro.crashed,
            agrees: sum_r_human >= ro.sum_r_agent,
        });
    }
    let n = verdicts.len();
    let mean = |f: fn(&EpmVerdict) -> f64| (n > 0).then(|| verdicts.iter().map(f).sum::<f64>() / n as f64);
    let summary = EpmSummary {
        mode: if cfg.oracle_mode { "oracle" } else { "learned" }.into(),
        horizon: cfg.horizon,
        n_windows: n,
        agreement_rate: mean(|v| if v.agrees { 1.0 } else { 0.0 }),
        mean_sum_r_human: mean(|v| v.sum_r_human),
        mean_sum_r_agent: mean(|v| v.sum_r_agent),
        agent_crashes: verdicts.iter().filter(|v| v.agent_crashed).count(),
        global: if cfg.global_mode {
            Some(global_comparison(records, dynamics, policy, cfg.horizon)?)
        } else {
            None
        },
    };
    Ok(EpmReport { summary, verdicts })
}

pub fn global_comparison<D: Dynamics, P: Policy + ?Sized>(
    records: &[EvalRecord],
    dynamics: &D,
    policy: &mut P,
    horizon: usize,
) -> Result<GlobalComparison> {
    let (mut agent, mut human, mut rollouts) = (0.0, 0.0, 0);
    for rec in records {
        if rec.transition.intervened {
            let ro = counterfactual_rollout(dynamics, dynamics.start(rec)?, rec.transition.a_agent, policy, horizon)?;
            rollouts += 1;
            if ro.crashed {
                agent = -1.0;
            } else {
                agent += ro.sum_r_agent;
            }
        } else {
            human += rec.transition.r;
        }
    }
    Ok(GlobalComparison {
        sum_r_agent: agent,
        sum_r_human: human,
        rollouts,
        agrees: human >= agent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::OBS_DIM;
    use crate::replay::Transition;

    fn rec(step: u64, episode: u64, intervened: bool) -> EvalRecord {
        let o = Observation([0.2; OBS_DIM]);
        EvalRecord {
            episode,
            step,
            transition: Transition {
                s: o,
                a_agent: 3,
                a_human: if intervened { 5 } else { -1 },
                r: 0.5,
                s_next: o,
                done: false,
                intervened,
                lambda_h: 0.5,
            },
            crashed: false,
            sim: None,
        }
    }

    #[test]
    fn windows_split_on_gaps_and_episodes() {
        let flags = [false, true, true, false, true, true, true];
        let mut rs: Vec<_> = flags.iter().enumerate().map(|(i, &f)| rec(i as u64, 0, f)).collect();
        rs[5].episode = 1;
        rs[6].episode = 1;
        assert_eq!(intervention_windows(&rs), vec![1..3, 4..5, 5..7]);
    }

    struct Fixed {
        reward: f64,
        crash_at: Option<usize>,
    }

    impl Dynamics for Fixed {
        type State = usize;
        fn start(&self, _: &EvalRecord) -> Result<usize> {
            Ok(0)
        }
        fn observation(&self, _: &usize) -> Observation {
            Observation([0.0; OBS_DIM])
        }
        fn sim<'a>(&self, _: &'a usize) -> Option<&'a SimState> {
            None
        }
        fn step(&self, s: &usize, _: usize) -> Result<SimStep<usize>> {
            Ok(SimStep {
                next: s + 1,
                reward: self.reward,
                crashed: self.crash_at == Some(*s),
            })
        }
    }

    #[test]
    fn crash_short_circuits_to_minus_one() {
        let mut p = crate::policy::RandomPolicy::new(0);
        let d = Fixed {
            reward: 0.9,
            crash_at: Some(0),
        };
        let r = counterfactual_rollout(&d, 0, 7, &mut p, 4).unwrap();
        assert_eq!(r.sum_r_agent, -1.0);
        assert!(r.rewards.is_empty());
        let d = Fixed {
            reward: 0.9,
            crash_at: Some(2),
        };
        assert_eq!(counterfactual_rollout(&d, 0, 7, &mut p, 4).unwrap().sum_r_agent, -1.0);
        let d = Fixed {
            reward: 0.25,
            crash_at: None,
        };
        let r = counterfactual_rollout(&d, 0, 7, &mut p, 1).unwrap();
        assert_eq!(r.sum_r_agent, 0.25);
        assert_eq!(r.actions, vec![7]);
        assert!(counterfactual_rollout(&d, 0, 7, &mut p, 0).is_err());
    }

    #[test]
    fn empty_store_has_undefined_rate() {
        let rs: Vec<_> = (0..5).map(|i| rec(i, 0, false)).collect();
        let d = Fixed {
            reward: 0.1,
            crash_at: None,
        };
        let rep = evaluate_interventions(&rs, &d, &mut crate::policy::RandomPolicy::new(0), &EpmConfig::default()).unwrap();
        assert!(rep.verdicts.is_empty());
        assert_eq!(rep.summary.agreement_rate, None);
    }

    #[test]
    fn window_horizon_is_clipped_to_length() {
        let rs: Vec<_> = [false, true, true, false].iter().enumerate().map(|(i, &f)| rec(i as u64, 0, f)).collect();
        let d = Fixed {
            reward: 0.4,
            crash_at: None,
        };
        let cfg = EpmConfig {
            global_mode: true,
            ..EpmConfig::default()
        };
        let rep = evaluate_interventions(&rs, &d, &mut crate::policy::RandomPolicy::new(0), &cfg).unwrap();
        let v = &rep.verdicts[0];
        assert_eq!(v.horizon, 2);
        assert_eq!(v.sum_r_human, 1.0);
        assert!((v.sum_r_agent - 0.8).abs() < 1e-12);
        assert!(v.agrees);
        let g = rep.summary.global.unwrap();
        assert_eq!(g.rollouts, 2);
        assert_eq!(g.sum_r_human, 1.0);
        assert!((g.sum_r_agent - 3.2).abs() < 1e-12);
        assert!(!g.agrees);
    }
}
