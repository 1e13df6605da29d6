//! `epm train` and `epm eval`.

use std::path::{Path, PathBuf};

use iddqn::epm::{
    evaluate_interventions, samples_from_records, train_classifier, train_predictive, ClassifierMetrics, EpmModels,
    EpmReport, OracleDynamics, PredictiveMetrics,
};
use iddqn::replay::EvaluativeStore;
use iddqn::Real;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{HarnessError, HarnessResult};
use crate::eval::LoadedPolicy;
use crate::train::{create_dir, write_json, CHECKPOINT_DIR, FINAL_CHECKPOINT, STORE_FILE};

pub const MODELS_FILE: &str = "epm_models.bin";
pub const EPM_TRAIN_FILE: &str = "epm_train.json";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const EPM_DIR: &str = "epm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpmTrainSummary {
    pub transitions: usize,
    pub crashes: usize,
    pub predictive: PredictiveMetrics,
    pub classifier: ClassifierMetrics,
}

/// A store file, or the store inside a run directory.
pub fn store_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(STORE_FILE)
    } else {
        path.to_path_buf()
    }
}

/// The run directory a store path refers to.
pub fn store_run_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().unwrap_or(Path::new(".")).to_path_buf()
    }
}

pub fn load_store(path: &Path) -> HarnessResult<EvaluativeStore> {
    EvaluativeStore::load(&store_path(path)).map_err(HarnessError::input)
}

pub fn epm_train(store: &Path, cfg: &RunConfig, out: &Path) -> HarnessResult<(EpmModels<Real>, EpmTrainSummary)> {
    let store = load_store(store)?;
    let samples = samples_from_records(store.records());
    let (predictive, pm) = train_predictive::<Real>(&samples, &cfg.epm)?;
    let (classifier, cm) = train_classifier::<Real>(&samples, &cfg.epm)?;
    let models = EpmModels { predictive, classifier };
    let summary = EpmTrainSummary {
        transitions: samples.len(),
        crashes: samples.iter().filter(|s| s.crashed).count(),
        predictive: pm,
        classifier: cm,
    };
    create_dir(out)?;
    models.save(&out.join(MODELS_FILE))?;
    write_json(&out.join(EPM_TRAIN_FILE), &summary)?;
    Ok((models, summary))
}

pub enum Dynamics<'a> {
    Oracle,
    Learned(&'a Path),
}

/// Evaluate every intervention window of `store` against the greedy policy
/// in `checkpoint` (default: the run's final checkpoint).
pub fn epm_eval(
    store: &Path,
    checkpoint: Option<&Path>,
    dynamics: Dynamics<'_>,
    cfg: &RunConfig,
    out: &Path,
) -> HarnessResult<EpmReport> {
    let records = load_store(store)?;
    let ck = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => store_run_dir(store).join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT),
    };
    let mut policy = LoadedPolicy::load(&ck)?;
    let mut epm = cfg.epm.clone();
    let report = match dynamics {
        Dynamics::Oracle => {
            epm.oracle_mode = true;
            let d = OracleDynamics {
                track: cfg.training_track()?,
                reward: cfg.env.sim.reward,
                dt: cfg.env.sim.dt,
            };
            evaluate_interventions(records.records(), &d, &mut policy, &epm)?
        }
        Dynamics::Learned(models) => {
            epm.oracle_mode = false;
            let m = EpmModels::<Real>::load(models).map_err(HarnessError::input)?;
            evaluate_interventions(records.records(), &m, &mut policy, &epm)?
        }
    };
    create_dir(out)?;
    report.save(&out.join(VERDICTS_FILE))?;
    Ok(report)
}

/// One-line human summary of a report.
pub fn describe(report: &EpmReport) -> String {
    let s = &report.summary;
    match s.agreement_rate {
        None => format!("{} mode: no intervention windows in store, agreement rate not applicable", s.mode),
        Some(rate) => format!(
            "{} mode: {} windows, agreement rate {:.3}, mean sum_r_human {:.4}, mean sum_r_agent {:.4}, agent crashes {}",
            s.mode,
            s.n_windows,
            rate,
            s.mean_sum_r_human.unwrap_or(f64::NAN),
            s.mean_sum_r_agent.unwrap_or(f64::NAN),
            s.agent_crashes
        ),
    }
}
