//! When human input is solicited, and where it comes from.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::env::{steering_to_action, wrap_angle, Observation, SimState, MAX_STEERING, N_ACTIONS, WHEELBASE};
use crate::error::{Error, Result};
use crate::track::{Point, Track};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gate {
    Closed,
    Open,
}

impl Gate {
    pub fn is_open(self) -> bool {
        self == Gate::Open
    }
}

/// Windows `[k*h_freq, k*h_freq + h_steps)` for `k = 1..=h_limit`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterventionSchedule {
    pub h_freq: u64,
    pub h_steps: u64,
    pub h_limit: u64,
}

impl Default for InterventionSchedule {
    fn default() -> Self {
        Self {
            h_freq: 2000,
            h_steps: 200,
            h_limit: 5,
        }
    }
}

impl InterventionSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.h_freq == 0 {
            return Err(Error::Config("intervention.h_freq must be > 0".into()));
        }
        if self.h_steps > self.h_freq {
            return Err(Error::Config(format!(
                "intervention.h_steps ({}) must not exceed h_freq ({})",
                self.h_steps, self.h_freq
            )));
        }
        Ok(())
    }

    pub fn disabled() -> Self {
        Self { h_limit: 0, ..Self::default() }
    }

    /// Window number (1-based) containing `step`, if any.
    pub fn window_of(&self, step: u64) -> Option<u64> {
        if self.h_freq == 0 || self.h_steps == 0 {
            return None;
        }
        let k = step / self.h_freq;
        (k >= 1 && k <= self.h_limit && step % self.h_freq < self.h_steps).then_some(k)
    }

    /// Gate state at `step`, given how many windows have been opened so far.
    pub fn gate(&self, windows_used: u64, step: u64) -> Gate {
        match self.window_of(step) {
            Some(k) if k <= windows_used + 1 && windows_used <= self.h_limit => Gate::Open,
            _ => Gate::Closed,
        }
    }

    pub fn max_intervened(&self) -> u64 {
        self.h_limit * self.h_steps
    }
}

/// Stateful view of a schedule that counts opened windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateCounter {
    pub schedule: InterventionSchedule,
    pub windows_used: u64,
    last_window: Option<u64>,
}

impl GateCounter {
    pub fn new(schedule: InterventionSchedule) -> Self {
        Self {
            schedule,
            windows_used: 0,
            last_window: None,
        }
    }

    pub fn advance(&mut self, step: u64) -> Gate {
        let gate = self.schedule.gate(self.windows_used, step);
        if gate.is_open() {
            let k = self.schedule.window_of(step);
            if k != self.last_window {
                self.windows_used += 1;
                self.last_window = k;
            }
        }
        gate
    }
}

/// A provider of corrective actions. `poll` is only called while the gate is
/// open and must not block.
pub trait InterventionSource {
    fn poll(&mut self, step: u64, obs: &Observation, state: &SimState) -> Result<Option<usize>>;

    fn tag(&self) -> &str;
}

/// Source that never intervenes.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoSource;

impl InterventionSource for NoSource {
    fn poll(&mut self, _: u64, _: &Observation, _: &SimState) -> Result<Option<usize>> {
        Ok(None)
    }

    fn tag(&self) -> &str {
        "none"
    }
}

pub const DEFAULT_LOOKAHEAD: f64 = 6.0;

/// Pure-pursuit steering for a target at bearing `alpha` (relative to the
/// heading, positive = right) and distance `lookahead`. Targets abeam or
/// behind get full lock.
pub fn pursuit_steering(alpha: f64, lookahead: f64) -> f64 {
    let alpha = wrap_angle(alpha);
    if alpha.abs() >= std::f64::consts::FRAC_PI_2 {
        return MAX_STEERING.copysign(alpha);
    }
    (2.0 * WHEELBASE * alpha.sin())
        .atan2(lookahead)
        .clamp(-MAX_STEERING, MAX_STEERING)
}

/// Pure pursuit toward the waypoint nearest the point `lookahead` meters ahead.
#[derive(Clone, Debug)]
pub struct ScriptedExpert {
    track: Arc<Track>,
    pub lookahead: f64,
}

impl ScriptedExpert {
    pub fn new(track: Arc<Track>) -> Self {
        Self {
            track,
            lookahead: DEFAULT_LOOKAHEAD,
        }
    }

    pub fn with_lookahead(track: Arc<Track>, lookahead: f64) -> Self {
        Self { track, lookahead }
    }

    pub fn target(&self, state: &SimState) -> Point {
        let v = &state.vehicle;
        let probe = [
            v.position[0] + self.lookahead * v.heading.cos(),
            v.position[1] + self.lookahead * v.heading.sin(),
        ];
        self.track.waypoints()[self.track.nearest(probe).0]
    }

    pub fn steering(&self, state: &SimState) -> f64 {
        let v = &state.vehicle;
        let t = self.target(state);
        let bearing = (t[1] - v.position[1]).atan2(t[0] - v.position[0]);
        pursuit_steering(bearing - v.heading, self.lookahead)
    }

    pub fn action(&self, state: &SimState) -> usize {
        steering_to_action(self.steering(state))
    }
}

impl InterventionSource for ScriptedExpert {
    fn poll(&mut self, _: u64, _: &Observation, state: &SimState) -> Result<Option<usize>> {
        Ok(Some(self.action(state)))
    }

    fn tag(&self) -> &str {
        "expert"
    }
}

/// One poll result. `action_index` is `None` when the source declined.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u64,
    pub action_index: Option<usize>,
    pub source_tag: String,
}

pub fn save_trace(path: &Path, entries: &[TraceEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::storage(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e).map_err(|err| Error::storage(path, err))?;
        w.write_all(b"\n").map_err(|err| Error::storage(path, err))?;
    }
    w.flush().map_err(|e| Error::storage(path, e))
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEntry>> {
    let file = File::open(path).map_err(|e| Error::storage(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: TraceEntry =
            serde_json::from_str(&line).map_err(|e| Error::storage(path, format!("line {}: {e}", n + 1)))?;
        if matches!(entry.action_index, Some(a) if a >= N_ACTIONS) {
            return Err(Error::storage(path, format!("line {}: invalid action index", n + 1)));
        }
        out.push(entry);
    }
    Ok(out)
}

/// Wraps a source and logs every poll.
pub struct Recorder<S> {
    pub inner: S,
    pub entries: Vec<TraceEntry>,
}

impl<S: InterventionSource> Recorder<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            entries: Vec::new(),
        }
    }
}

impl<S: InterventionSource> InterventionSource for Recorder<S> {
    fn poll(&mut self, step: u64, obs: &Observation, state: &SimState) -> Result<Option<usize>> {
        let a = self.inner.poll(step, obs, state)?;
        self.entries.push(TraceEntry {
            step,
            action_index: a,
            source_tag: self.inner.tag().to_string(),
        });
        Ok(a)
    }

    fn tag(&self) -> &str {
        self.inner.tag()
    }
}

/// Replays a recorded trace. An empty trace never intervenes; otherwise every
/// poll must match the next recorded step.
#[derive(Clone, Debug)]
pub struct TraceSource {
    entries: Vec<TraceEntry>,
    cursor: usize,
}

impl TraceSource {
    pub fn new(entries: Vec<TraceEntry>) -> Self {
        Self { entries, cursor: 0 }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(load_trace(path)?))
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.cursor
    }
}

impl InterventionSource for TraceSource {
    fn poll(&mut self, step: u64, _: &Observation, _: &SimState) -> Result<Option<usize>> {
        if self.entries.is_empty() {
            return Ok(None);
        }
        match self.entries.get(self.cursor) {
            None => Err(Error::ReplayDivergence {
                step,
                reason: "trace exhausted".into(),
            }),
            Some(e) if e.step != step => Err(Error::ReplayDivergence {
                step,
                reason: format!("trace has next entry at step {}", e.step),
            }),
            Some(e) => {
                self.cursor += 1;
                Ok(e.action_index)
            }
        }
    }

    fn tag(&self) -> &str {
        "trace"
    }
}

pub const STALE_AFTER: Duration = Duration::from_millis(500);

#[derive(Debug, Default)]
struct MailboxState {
    latest: Option<(usize, Instant)>,
    engaged: bool,
    connected: bool,
    warned: bool,
}

/// Single-slot inbox written by the network side and drained by the trainer.
#[derive(Clone, Debug, Default)]
pub struct Mailbox(Arc<Mutex<MailboxState>>);

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, MailboxState> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn set_connected(&self, on: bool) {
        let mut s = self.lock();
        s.connected = on;
        if on {
            s.warned = false;
        } else {
            s.engaged = false;
            s.latest = None;
        }
    }

    pub fn set_engaged(&self, on: bool) {
        let mut s = self.lock();
        s.engaged = on;
        if !on {
            s.latest = None;
        }
    }

    pub fn engaged(&self) -> bool {
        self.lock().engaged
    }

    /// Post a steering index received at `at`. Ignored unless engaged.
    pub fn post_steer_at(&self, index: usize, at: Instant) -> Result<()> {
        if index >= N_ACTIONS {
            return Err(Error::InvalidAction(index as i64));
        }
        let mut s = self.lock();
        if s.engaged {
            s.latest = Some((index, at));
        }
        Ok(())
    }

    pub fn post_steer(&self, index: usize) -> Result<()> {
        self.post_steer_at(index, Instant::now())
    }

    /// Take the newest fresh steering index, if any.
    pub fn take_at(&self, now: Instant) -> Option<usize> {
        let mut s = self.lock();
        if !s.connected {
            if !s.warned {
                log::warn!("live source polled with no client connected");
                s.warned = true;
            }
            return None;
        }
        let (index, at) = s.latest.take()?;
        if !s.engaged || now.saturating_duration_since(at) > STALE_AFTER {
            return None;
        }
        Some(index)
    }
}

/// Human input arriving through a [`Mailbox`].
#[derive(Clone, Debug, Default)]
pub struct LiveSource {
    pub mailbox: Mailbox,
}

impl LiveSource {
    pub fn new(mailbox: Mailbox) -> Self {
        Self { mailbox }
    }
}

impl InterventionSource for LiveSource {
    fn poll(&mut self, _: u64, _: &Observation, _: &SimState) -> Result<Option<usize>> {
        Ok(self.mailbox.take_at(Instant::now()))
    }

    fn tag(&self) -> &str {
        "live"
    }
}

impl<S: InterventionSource + ?Sized> InterventionSource for Box<S> {
    fn poll(&mut self, step: u64, obs: &Observation, state: &SimState) -> Result<Option<usize>> {
        (**self).poll(step, obs, state)
    }

    fn tag(&self) -> &str {
        (**self).tag()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{observe, CENTER_ACTION};
    use crate::track::{straight, Track};

    #[test]
    fn gate_windows() {
        let s = InterventionSchedule {
            h_freq: 100,
            h_steps: 10,
            h_limit: 2,
        };
        let mut c = GateCounter::new(s);
        let open: Vec<u64> = (0..400).filter(|&t| c.advance(t).is_open()).collect();
        let expect: Vec<u64> = (100..110).chain(200..210).collect();
        assert_eq!(open, expect);
        assert_eq!(c.windows_used, 2);
        let none = InterventionSchedule::disabled();
        assert!((0..10_000).all(|t| !none.gate(0, t).is_open()));
    }

    #[test]
    fn expert_centered_goes_straight() {
        let track = Arc::new(Track::new(straight(0)).unwrap());
        let (p, h) = track.start_pose();
        let st = SimState::at_rest([p[0] + 20.0, p[1]], h, 10.0);
        assert_eq!(ScriptedExpert::new(track).action(&st), CENTER_ACTION);
    }

    #[test]
    fn expert_never_crashes_on_builtin_tracks() {
        use crate::env::{EnvConfig, TrackEnv};
        use crate::track::BuiltinTrack;
        for b in BuiltinTrack::ALL {
            let track = Arc::new(Track::new(b.generate(3)).unwrap());
            let cfg = EnvConfig {
                success_threshold: f64::INFINITY,
                max_episode_steps: u64::MAX,
                ..EnvConfig::default()
            };
            let mut env = TrackEnv::new(track.clone(), cfg, 1).unwrap();
            let expert = ScriptedExpert::new(track.clone());
            env.reset();
            let mut worst: f64 = 0.0;
            for t in 0..5000 {
                let st = env.step(expert.action(env.state())).unwrap();
                assert!(!st.crashed, "{} crashed at step {t}", b.name());
                worst = worst.max(st.observation.cross_track().abs());
                if !track.spec().closed && env.state().vehicle.step_index > 0 {
                    let (i, _) = track.nearest(env.state().vehicle.position);
                    if i + 10 >= track.waypoints().len() {
                        break;
                    }
                }
            }
            eprintln!("{}: worst |cross_track| {worst:.3}", b.name());
        }
    }

    #[test]
    fn abeam_target_is_full_lock() {
        assert_eq!(steering_to_action(pursuit_steering(-std::f64::consts::FRAC_PI_2, 6.0)), 0);
        assert_eq!(steering_to_action(pursuit_steering(std::f64::consts::FRAC_PI_2, 30.0)), 32);
        for la in [0.5, 6.0, 100.0] {
            assert_eq!(pursuit_steering(-1.2, la), -pursuit_steering(1.2, la));
        }
    }

    #[test]
    fn trace_replay_and_divergence() {
        let track = Track::new(straight(0)).unwrap();
        let (p, h) = track.start_pose();
        let st = SimState::at_rest(p, h, 10.0);
        let obs = observe(&st, &track);
        let entries = vec![
            TraceEntry {
                step: 5,
                action_index: Some(3),
                source_tag: "expert".into(),
            },
            TraceEntry {
                step: 6,
                action_index: None,
                source_tag: "expert".into(),
            },
        ];
        let mut src = TraceSource::new(entries.clone());
        assert_eq!(src.poll(5, &obs, &st).unwrap(), Some(3));
        assert_eq!(src.poll(6, &obs, &st).unwrap(), None);
        assert!(matches!(src.poll(7, &obs, &st), Err(Error::ReplayDivergence { step: 7, .. })));
        let mut src = TraceSource::new(entries);
        assert!(matches!(src.poll(4, &obs, &st), Err(Error::ReplayDivergence { step: 4, .. })));
        let mut empty = TraceSource::new(vec![]);
        assert_eq!(empty.poll(100, &obs, &st).unwrap(), None);
    }

    #[test]
    fn mailbox_rules() {
        let m = Mailbox::new();
        let t0 = Instant::now();
        assert_eq!(m.take_at(t0), None);
        m.set_connected(true);
        assert_eq!(m.take_at(t0), None);
        m.post_steer_at(3, t0).unwrap();
        assert_eq!(m.take_at(t0), None, "not engaged");
        m.set_engaged(true);
        m.post_steer_at(3, t0).unwrap();
        m.post_steer_at(7, t0).unwrap();
        assert_eq!(m.take_at(t0), Some(7));
        assert_eq!(m.take_at(t0), None, "read clears");
        m.post_steer_at(9, t0).unwrap();
        assert_eq!(m.take_at(t0 + Duration::from_millis(600)), None, "stale");
        m.post_steer_at(9, t0).unwrap();
        m.set_engaged(false);
        assert_eq!(m.take_at(t0), None);
        assert!(m.post_steer_at(33, t0).is_err());
    }
}
