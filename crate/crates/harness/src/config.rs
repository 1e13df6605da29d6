//! Declarative run configuration, loaded from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use iddqn::agent::{AgentConfig, HumanWeightSchedule};
use iddqn::baselines::{BcConfig, DqfdConfig, HgDaggerConfig};
use iddqn::env::{EnvConfig, TrackEnv};
use iddqn::epm::EpmConfig;
use iddqn::intervention::{InterventionSchedule, DEFAULT_LOOKAHEAD};
use iddqn::track::{BuiltinTrack, Track, TrackSpec};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, HarnessResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Iddqn,
    Ddqn,
    Bc,
    Dqfd,
    Hgdagger,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Iddqn => "iddqn",
            Kind::Ddqn => "ddqn",
            Kind::Bc => "bc",
            Kind::Dqfd => "dqfd",
            Kind::Hgdagger => "hgdagger",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub kind: Kind,
    /// Master seed. Agent, baseline and EPM seeds are derived from it.
    pub seed: u64,
    pub total_steps: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub precision: Precision,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            kind: Kind::Iddqn,
            seed: 0,
            total_steps: 50_000,
            checkpoint_every: 10_000,
            precision: Precision::F32,
            out: PathBuf::from("runs/default"),
        }
    }
}

/// A builtin track by name or a track file. Neither set means the default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackSource {
    pub builtin: Option<String>,
    pub file: Option<PathBuf>,
    /// Generator seed for builtin tracks; defaults to the run seed.
    pub seed: Option<u64>,
}

impl TrackSource {
    pub fn named(name: &str) -> Self {
        Self {
            builtin: Some(name.into()),
            ..Self::default()
        }
    }

    fn validate(&self, field: &str) -> HarnessResult<()> {
        if self.builtin.is_some() && self.file.is_some() {
            return Err(HarnessError::Config(format!("{field}: set either `builtin` or `file`, not both")));
        }
        if let Some(name) = &self.builtin {
            if BuiltinTrack::from_name(name).is_none() {
                let known: Vec<&str> = BuiltinTrack::ALL.iter().map(|t| t.name()).collect();
                return Err(HarnessError::Config(format!(
                    "{field}.builtin: unknown track {name:?} (known: {})",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn load(&self, default: &str, run_seed: u64) -> HarnessResult<Track> {
        let spec = match &self.file {
            Some(path) => TrackSpec::load(path).map_err(HarnessError::input)?,
            None => {
                let name = self.builtin.as_deref().unwrap_or(default);
                let b = BuiltinTrack::from_name(name)
                    .ok_or_else(|| HarnessError::Config(format!("unknown track {name:?}")))?;
                b.generate(self.seed.unwrap_or(run_seed))
            }
        };
        Track::new(spec).map_err(HarnessError::input)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSection {
    #[serde(flatten)]
    pub sim: EnvConfig,
    pub track: TrackSource,
    pub heldout: TrackSource,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            sim: EnvConfig::default(),
            track: TrackSource::default(),
            heldout: TrackSource::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Expert,
    None,
    Trace,
    Live,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterventionSection {
    #[serde(flatten)]
    pub schedule: InterventionSchedule,
    pub source: SourceKind,
    /// Trace file replayed when `source = "trace"`.
    pub trace: Option<PathBuf>,
    /// Pure-pursuit lookahead of the scripted expert (meters).
    pub lookahead: f64,
}

impl Default for InterventionSection {
    fn default() -> Self {
        Self {
            schedule: InterventionSchedule::default(),
            source: SourceKind::Expert,
            trace: None,
            lookahead: DEFAULT_LOOKAHEAD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoSection {
    pub count: usize,
    /// Use this demonstration file instead of collecting from the expert.
    pub file: Option<PathBuf>,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self { count: 3000, file: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqfdSection {
    pub pretrain_steps: u64,
    pub margin: f64,
    pub lambda_e: f64,
}

impl Default for DqfdSection {
    fn default() -> Self {
        let d = DqfdConfig::default();
        Self {
            pretrain_steps: d.pretrain_steps,
            margin: d.margin,
            lambda_e: d.lambda_e,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    /// Environment steps per second; 0 runs unthrottled.
    pub step_hz: f64,
    pub frame_hz: f64,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8765,
            step_hz: 10.0,
            frame_hz: 20.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvSection,
    pub agent: AgentConfig,
    pub intervention: InterventionSection,
    pub demos: DemoSection,
    pub bc: BcConfig,
    pub dqfd: DqfdSection,
    pub hg_dagger: HgDaggerConfig,
    pub epm: EpmConfig,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

/// Key paths present in `input` but absent from `known`.
fn unknown_keys(input: &toml::Value, known: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    let (toml::Value::Table(i), toml::Value::Table(k)) = (input, known) else {
        return;
    };
    for (key, v) in i {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match k.get(key) {
            None => out.push(path),
            Some(kv) => unknown_keys(v, kv, &path, out),
        }
    }
}

fn check(ok: bool, field: &str, msg: impl FnOnce() -> String) -> HarnessResult<()> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("{field}: {}", msg())))
    }
}

fn scoped(section: &str, r: iddqn::Result<()>) -> HarnessResult<()> {
    r.map_err(|e| match e {
        iddqn::Error::Config(m) => HarnessError::Config(format!("[{section}] {m}")),
        other => HarnessError::Config(format!("[{section}] {other}")),
    })
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> HarnessResult<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| HarnessError::Config(format!("config: {e}")))?;
        let cfg: RunConfig = value
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(format!("config: {}", e.message())))?;
        let known = toml::Value::try_from(&cfg).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&value, &known, "", &mut unknown);
        // optional keys are absent from the re-serialized defaults
        unknown.retain(|k| !OPTIONAL_KEYS.contains(&k.as_str()));
        if !unknown.is_empty() {
            return Err(HarnessError::Config(format!("unknown config key(s): {}", unknown.join(", "))));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> HarnessResult<String> {
        toml::to_string(self).map_err(|e| HarnessError::Runtime(format!("serializing config: {e}")))
    }

    /// Propagate the master seed and force kind-specific settings.
    pub fn normalize(&mut self) {
        let seed = self.run.seed;
        self.agent.seed = seed;
        self.bc.seed = seed;
        self.hg_dagger.bc.seed = seed;
        self.epm.seed = seed;
        if self.run.kind == Kind::Ddqn {
            self.intervention.source = SourceKind::None;
            self.intervention.schedule = InterventionSchedule::disabled();
        }
    }

    pub fn validate(&self) -> HarnessResult<()> {
        check(self.run.total_steps > 0 || matches!(self.run.kind, Kind::Bc | Kind::Hgdagger), "run.total_steps", || {
            "must be >= 1".into()
        })?;
        let e = &self.env.sim;
        check(e.dt > 0.0 && e.dt.is_finite(), "env.dt", || format!("must be > 0, got {}", e.dt))?;
        check(e.success_threshold > 0.0, "env.success_threshold", || {
            format!("must be > 0, got {}", e.success_threshold)
        })?;
        check(e.max_episode_steps > 0, "env.max_episode_steps", || "must be >= 1".into())?;
        check(e.start_offset >= 0.0, "env.start_offset", || format!("must be >= 0, got {}", e.start_offset))?;
        check(e.start_heading_noise >= 0.0, "env.start_heading_noise", || {
            format!("must be >= 0, got {}", e.start_heading_noise)
        })?;
        scoped("env.reward", e.reward.validate())?;
        self.env.track.validate("env.track")?;
        self.env.heldout.validate("env.heldout")?;
        scoped("agent", self.agent.validate())?;
        scoped("intervention", self.intervention.schedule.validate())?;
        check(self.intervention.lookahead > 0.0, "intervention.lookahead", || {
            format!("must be > 0, got {}", self.intervention.lookahead)
        })?;
        if self.intervention.source == SourceKind::Trace {
            check(self.intervention.trace.is_some(), "intervention.trace", || {
                "required when source = \"trace\"".into()
            })?;
        }
        check(self.demos.count > 0, "demos.count", || "must be >= 1".into())?;
        check(self.bc.epochs > 0, "bc.epochs", || "must be >= 1".into())?;
        check(self.bc.batch_size > 0, "bc.batch_size", || "must be >= 1".into())?;
        check(self.bc.lr > 0.0, "bc.lr", || format!("must be > 0, got {}", self.bc.lr))?;
        scoped("dqfd", self.dqfd_config().validate())?;
        check(self.hg_dagger.iterations > 0, "hg_dagger.iterations", || "must be >= 1".into())?;
        check(
            self.hg_dagger.handback <= self.hg_dagger.takeover,
            "hg_dagger.handback",
            || format!("must be <= takeover ({})", self.hg_dagger.takeover),
        )?;
        scoped("epm", self.epm.validate())?;
        check(self.eval.episodes > 0, "eval.episodes", || "must be >= 1".into())?;
        check(self.serve.frame_hz >= 10.0, "serve.frame_hz", || {
            format!("must be >= 10, got {}", self.serve.frame_hz)
        })?;
        check(self.serve.step_hz >= 0.0, "serve.step_hz", || format!("must be >= 0, got {}", self.serve.step_hz))?;
        Ok(())
    }

    pub fn dqfd_config(&self) -> DqfdConfig {
        DqfdConfig {
            pretrain_steps: self.dqfd.pretrain_steps,
            margin: self.dqfd.margin,
            lambda_e: self.dqfd.lambda_e,
            agent: self.agent.clone(),
        }
    }

    pub fn training_track(&self) -> HarnessResult<Arc<Track>> {
        Ok(Arc::new(self.env.track.load(BuiltinTrack::Loop.name(), self.run.seed)?))
    }

    pub fn heldout_track(&self) -> HarnessResult<Arc<Track>> {
        Ok(Arc::new(self.env.heldout.load(BuiltinTrack::SCurve.name(), self.run.seed)?))
    }

    pub fn env_for(&self, track: Arc<Track>, seed: u64) -> HarnessResult<TrackEnv> {
        TrackEnv::new(track, self.env.sim.clone(), seed).map_err(HarnessError::from)
    }

    /// Short series label, e.g. `iddqn-decay` or `ddqn`.
    pub fn label(&self) -> String {
        match self.run.kind {
            Kind::Iddqn => format!("iddqn-{}", self.agent.schedule.label()),
            k => k.name().to_string(),
        }
    }

    /// Set a dotted key (`env.reward.delta`) from a TOML value. The
    /// `agent.schedule` key also accepts `"decay"` or a number.
    pub fn with_override(&self, key: &str, value: &toml::Value) -> HarnessResult<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        let value = if key == "agent.schedule" {
            schedule_shorthand(value, &self.agent.schedule)?
        } else {
            value.clone()
        };
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| HarnessError::Config(format!("{key}: not a table path")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let text = toml::to_string(&root).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        Self::from_toml_str(&text).map_err(|e| HarnessError::Config(format!("override {key}: {e}")))
    }
}

const OPTIONAL_KEYS: &[&str] = &[
    "env.track.builtin",
    "env.track.file",
    "env.track.seed",
    "env.heldout.builtin",
    "env.heldout.file",
    "env.heldout.seed",
    "intervention.trace",
    "demos.file",
];

fn schedule_shorthand(value: &toml::Value, current: &HumanWeightSchedule) -> HarnessResult<toml::Value> {
    let schedule = match value {
        toml::Value::String(s) if s == "decay" => match *current {
            HumanWeightSchedule::LinearDecay { .. } => *current,
            HumanWeightSchedule::Constant { .. } => HumanWeightSchedule::default(),
        },
        toml::Value::Float(l) => HumanWeightSchedule::constant(*l),
        toml::Value::Integer(l) => HumanWeightSchedule::constant(*l as f64),
        toml::Value::Table(_) => return Ok(value.clone()),
        other => {
            return Err(HarnessError::Config(format!(
                "agent.schedule: expected \"decay\", a number or a table, got {other}"
            )))
        }
    };
    toml::Value::try_from(schedule).map_err(|e| HarnessError::Runtime(e.to_string()))
}
