//! `train` and `demo-collect`: drive a learner and write the run directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use iddqn::agent::{
    mean_return_after, run_training, ClippedDdqn, EpisodeMetrics, Iddqn, Learner, NullObserver, RunObserver, RunReport,
    Sinks, StepSnapshot,
};
use iddqn::approximator::DuelingNet;
use iddqn::baselines::{bc_train, collect_demonstrations, hg_dagger_run, BcReport, DemoDataset, Dqfd, HgDaggerReport};
use iddqn::checkpoint::Checkpoint;
use iddqn::env::TrackEnv;
use iddqn::intervention::{
    save_trace, InterventionSchedule, InterventionSource, LiveSource, NoSource, Recorder, ScriptedExpert, TraceSource,
};
use iddqn::replay::SharedStore;
use iddqn::track::Track;
use iddqn::Scalar;
use serde::{Deserialize, Serialize};

use crate::config::{Kind, Precision, RunConfig, SourceKind};
use crate::error::{HarnessError, HarnessResult};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const STORE_FILE: &str = "store.jsonl";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const DEMOS_FILE: &str = "demos.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Offsets that give demonstration and evaluation environments their own
/// seeded streams.
pub const DEMO_SEED_OFFSET: u64 = 7919;
pub const EVAL_SEED_OFFSET: u64 = 104_729;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub kind: String,
    pub label: String,
    pub seed: u64,
    pub total_steps: u64,
    pub episodes: usize,
    pub successes: usize,
    pub crashes: usize,
    pub intervened_steps: u64,
    pub windows_used: u64,
    pub train_steps: u64,
    /// Mean return of episodes ending in the last 1000 steps.
    pub final_1000: Option<f64>,
    pub demo_count: Option<usize>,
    pub bc: Option<BcReport>,
    pub hg_dagger: Option<HgDaggerReport>,
}

impl TrainSummary {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            kind: cfg.run.kind.name().into(),
            label: cfg.label(),
            seed: cfg.run.seed,
            total_steps: 0,
            episodes: 0,
            successes: 0,
            crashes: 0,
            intervened_steps: 0,
            windows_used: 0,
            train_steps: 0,
            final_1000: None,
            demo_count: None,
            bc: None,
            hg_dagger: None,
        }
    }

    fn absorb(&mut self, r: &RunReport) {
        self.total_steps = r.total_steps;
        self.episodes = r.episodes.len();
        self.successes = r.episodes.iter().filter(|e| e.success).count();
        self.crashes = r.episodes.iter().filter(|e| e.crashed).count();
        self.intervened_steps = r.intervened_steps;
        self.windows_used = r.windows_used;
        self.train_steps = r.train_steps;
        self.final_1000 = mean_return_after(&r.episodes, r.total_steps.saturating_sub(1000));
    }
}

fn create(path: &Path) -> HarnessResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(&format!("creating {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> HarnessResult<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(&format!("writing {}", path.display()), e))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> HarnessResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> HarnessResult<D> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> HarnessResult<()> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(&format!("creating {}", path.display()), e))
}

/// Writes periodic and fault checkpoints; forwards everything else.
struct CheckpointWriter<'a> {
    dir: PathBuf,
    kind: &'static str,
    width: u8,
    inner: &'a mut dyn RunObserver,
    last: Option<PathBuf>,
}

impl RunObserver for CheckpointWriter<'_> {
    fn wants_steps(&self) -> bool {
        self.inner.wants_steps()
    }

    fn on_step(&mut self, snap: &StepSnapshot) -> iddqn::Result<()> {
        self.inner.on_step(snap)
    }

    fn on_episode(&mut self, m: &EpisodeMetrics) -> iddqn::Result<()> {
        self.inner.on_episode(m)
    }

    fn on_checkpoint(&mut self, step: u64, snapshot: &[u8]) -> iddqn::Result<()> {
        let ck = Checkpoint {
            kind: self.kind.into(),
            step,
            width: self.width,
            payload: snapshot.to_vec(),
        };
        let path = self.dir.join(format!("step_{step}.ckpt"));
        ck.save(&path)?;
        self.last = Some(path);
        Ok(())
    }
}

/// Validated copy of `cfg` with derived seeds filled in.
pub fn prepared(cfg: &RunConfig) -> HarnessResult<RunConfig> {
    let mut cfg = cfg.clone();
    cfg.normalize();
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(cfg: &RunConfig, out: &Path) -> HarnessResult<TrainSummary> {
    train_session(cfg, out, None, &mut NullObserver)
}

/// Train with an optional live source (replacing the configured one) and an
/// extra observer.
pub fn train_session(
    cfg: &RunConfig,
    out: &Path,
    live: Option<LiveSource>,
    observer: &mut dyn RunObserver,
) -> HarnessResult<TrainSummary> {
    let mut cfg = prepared(cfg)?;
    cfg.run.out = out.to_path_buf();
    if cfg.intervention.source == SourceKind::Live && live.is_none() {
        return Err(HarnessError::Config(
            "intervention.source: \"live\" is only available through the serve command".into(),
        ));
    }
    create_dir(&out.join(CHECKPOINT_DIR))?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml_string()?)?;
    let summary = match cfg.run.precision {
        Precision::F32 => train_typed::<f32>(&cfg, out, live, observer)?,
        Precision::F64 => train_typed::<f64>(&cfg, out, live, observer)?,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn source_for(cfg: &RunConfig, track: &Arc<Track>, live: Option<LiveSource>) -> HarnessResult<Box<dyn InterventionSource>> {
    if let Some(l) = live {
        return Ok(Box::new(l));
    }
    Ok(match cfg.intervention.source {
        SourceKind::Expert => Box::new(ScriptedExpert::with_lookahead(track.clone(), cfg.intervention.lookahead)),
        SourceKind::None => Box::new(NoSource),
        SourceKind::Trace => {
            let path = cfg.intervention.trace.as_ref().expect("validated");
            Box::new(TraceSource::load(path).map_err(HarnessError::input)?)
        }
        SourceKind::Live => unreachable!("rejected before training"),
    })
}

/// Demonstrations from the configured file, or freshly collected.
pub fn demonstrations(cfg: &RunConfig, track: &Arc<Track>) -> HarnessResult<DemoDataset> {
    if let Some(path) = &cfg.demos.file {
        return DemoDataset::load(path).map_err(HarnessError::input);
    }
    let mut env = cfg.env_for(track.clone(), cfg.run.seed.wrapping_add(DEMO_SEED_OFFSET))?;
    let mut expert = ScriptedExpert::with_lookahead(track.clone(), cfg.intervention.lookahead);
    Ok(collect_demonstrations(&mut expert, &mut env, cfg.demos.count, cfg.run.seed)?)
}

pub fn demo_collect(cfg: &RunConfig, out: &Path) -> HarnessResult<DemoDataset> {
    let cfg = prepared(cfg)?;
    let track = cfg.training_track()?;
    let mut c = cfg.clone();
    c.demos.file = None;
    let demos = demonstrations(&c, &track)?;
    create_dir(out)?;
    demos.save(&out.join(DEMOS_FILE))?;
    Ok(demos)
}

fn train_typed<T: Scalar>(
    cfg: &RunConfig,
    out: &Path,
    live: Option<LiveSource>,
    observer: &mut dyn RunObserver,
) -> HarnessResult<TrainSummary> {
    let track = cfg.training_track()?;
    let mut env = cfg.env_for(track.clone(), cfg.run.seed)?;
    let mut summary = TrainSummary::new(cfg);
    match cfg.run.kind {
        Kind::Iddqn => {
            let src = source_for(cfg, &track, live)?;
            let mut l = Iddqn::<T>::new(cfg.agent.clone())?;
            let r = drive::<T, _>(&mut l, cfg, &mut env, src, cfg.intervention.schedule, out, observer)?;
            summary.absorb(&r);
        }
        Kind::Ddqn => {
            let mut l = ClippedDdqn::<T>::new(cfg.agent.clone())?;
            let r = drive::<T, _>(&mut l, cfg, &mut env, Box::new(NoSource), InterventionSchedule::disabled(), out, observer)?;
            summary.absorb(&r);
        }
        Kind::Dqfd => {
            let demos = demonstrations(cfg, &track)?;
            demos.save(&out.join(DEMOS_FILE))?;
            summary.demo_count = Some(demos.len());
            let mut l = Dqfd::<T>::new(cfg.dqfd_config(), &demos)?;
            l.pretrain()?;
            let r = drive::<T, _>(&mut l, cfg, &mut env, Box::new(NoSource), InterventionSchedule::disabled(), out, observer)?;
            summary.absorb(&r);
        }
        Kind::Bc => {
            let demos = demonstrations(cfg, &track)?;
            demos.save(&out.join(DEMOS_FILE))?;
            summary.demo_count = Some(demos.len());
            let mut net = DuelingNet::<T>::standard(cfg.run.seed);
            summary.bc = Some(bc_train(&demos, &mut net, &cfg.bc)?);
            finish_offline(out, "bc", &net)?;
        }
        Kind::Hgdagger => {
            let demos = demonstrations(cfg, &track)?;
            summary.demo_count = Some(demos.len());
            let expert = ScriptedExpert::with_lookahead(track.clone(), cfg.intervention.lookahead);
            let mut net = DuelingNet::<T>::standard(cfg.run.seed);
            let (data, rep) = hg_dagger_run(&demos, &expert, &mut env, &cfg.hg_dagger, &mut net)?;
            data.save(&out.join(DEMOS_FILE))?;
            summary.hg_dagger = Some(rep);
            finish_offline(out, "hgdagger", &net)?;
        }
    }
    Ok(summary)
}

fn finish_offline<T: Scalar>(out: &Path, kind: &str, net: &DuelingNet<T>) -> HarnessResult<()> {
    // offline learners have no episodes, stored transitions or traces
    create(&out.join(METRICS_FILE))?;
    Checkpoint::from_net(kind, 0, net).save(&out.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT))?;
    Ok(())
}

fn drive<T: Scalar, L: Learner>(
    learner: &mut L,
    cfg: &RunConfig,
    env: &mut TrackEnv,
    source: Box<dyn InterventionSource>,
    schedule: InterventionSchedule,
    out: &Path,
    observer: &mut dyn RunObserver,
) -> HarnessResult<RunReport> {
    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = create(&metrics_path)?;
    let store = SharedStore::new();
    let mut rec = Recorder::new(source);
    let kind = learner.kind();
    let mut ck = CheckpointWriter {
        dir: out.join(CHECKPOINT_DIR),
        kind,
        width: T::WIDTH,
        inner: observer,
        last: None,
    };
    let result = {
        let mut sinks = Sinks {
            metrics: Some(&mut metrics),
            store: Some(&store),
            observer: &mut ck,
            checkpoint_every: cfg.run.checkpoint_every,
        };
        run_training(env, &mut rec, schedule, learner, cfg.run.total_steps, &mut sinks)
    };
    metrics
        .flush()
        .map_err(|e| HarnessError::io(&format!("writing {}", metrics_path.display()), e))?;
    store.snapshot().save(&out.join(STORE_FILE))?;
    save_trace(&out.join(TRACE_FILE), &rec.entries)?;
    let report = result.map_err(|e| {
        let at = ck.last.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        HarnessError::Runtime(format!("training failed: {e} (checkpoint preserved: {at})"))
    })?;
    Checkpoint::new::<T>(kind, report.total_steps, learner.snapshot())
        .save(&out.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT))?;
    Ok(report)
}
