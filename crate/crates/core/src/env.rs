//! Kinematic driving simulator: discrete steering actions, the shaped
//! reward, vector observations and an episodic environment wrapper.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::track::{Point, Track};

pub const N_ACTIONS: usize = 33;
pub const CENTER_ACTION: usize = 16;
pub const MAX_STEERING: f64 = 0.8;
pub const STEERING_STEP: f64 = 0.05;
pub const WHEELBASE: f64 = 2.5;
pub const DT: f64 = 0.1;
pub const SPEED_MIN: f64 = 8.89;
pub const SPEED_MAX: f64 = 11.11;
pub const HISTORY_LEN: usize = 4;

pub const N_RAYS: usize = 9;
pub const OBS_DIM: usize = N_RAYS + 4;
pub const RAY_RANGE: f64 = 20.0;
/// Ray bearings relative to the heading, spread over [-90°, 90°].
pub const RAY_BEARINGS: [f64; N_RAYS] = [
    -std::f64::consts::FRAC_PI_2,
    -3.0 * std::f64::consts::FRAC_PI_8,
    -std::f64::consts::FRAC_PI_4,
    -std::f64::consts::FRAC_PI_8,
    0.0,
    std::f64::consts::FRAC_PI_8,
    std::f64::consts::FRAC_PI_4,
    3.0 * std::f64::consts::FRAC_PI_8,
    std::f64::consts::FRAC_PI_2,
];

/// Steering angle (radians) for a discrete action; index 16 is straight ahead.
pub fn action_to_steering(index: usize) -> Result<f64> {
    if index >= N_ACTIONS {
        return Err(Error::InvalidAction(index as i64));
    }
    let offset = index as i64 - CENTER_ACTION as i64;
    Ok(offset as f64 * STEERING_STEP)
}

/// Nearest discrete action for a steering angle, clamped to the action grid.
/// Exact half-steps round toward the center action.
pub fn steering_to_action(steering: f64) -> usize {
    let k = steering / STEERING_STEP;
    let mag = k.abs();
    let floor = mag.floor();
    let rounded = if mag - floor > 0.5 { floor + 1.0 } else { floor };
    let rounded = rounded.min(CENTER_ACTION as f64) as i64;
    let signed = if k < 0.0 { -rounded } else { rounded };
    (CENTER_ACTION as i64 + signed) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct RewardConfig<T = f64> {
    pub delta: T,
    pub beta: T,
    pub xi: T,
}

impl<T: Scalar> Default for RewardConfig<T> {
    fn default() -> Self {
        Self {
            delta: T::of(0.2),
            beta: T::of(0.2),
            xi: T::of(0.5),
        }
    }
}

impl RewardConfig<f64> {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("reward.delta must be > 0, got {}", self.delta)));
        }
        if !(self.xi >= 0.0) {
            return Err(Error::Config(format!("reward.xi must be >= 0, got {}", self.xi)));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> RewardConfig<T> {
        RewardConfig {
            delta: T::of(self.delta),
            beta: T::of(self.beta),
            xi: T::of(self.xi),
        }
    }
}

/// Positional reward `min(exp(-delta * (d^2 - beta)), 1)`.
pub fn reward_position<T: Scalar>(distance: T, cfg: &RewardConfig<T>) -> T {
    (-cfg.delta * (distance * distance - cfg.beta)).exp().min(T::one())
}

/// Last four executed steering values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionHistory {
    values: [f64; HISTORY_LEN],
    len: u8,
    head: u8,
}

impl ActionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut h = Self::new();
        for &v in values {
            h.push(v);
        }
        h
    }

    pub fn push(&mut self, steering: f64) {
        self.values[self.head as usize] = steering;
        self.head = ((self.head as usize + 1) % HISTORY_LEN) as u8;
        self.len = (self.len + 1).min(HISTORY_LEN as u8);
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    /// Stored values, oldest first.
    pub fn values(&self) -> Vec<f64> {
        let n = self.len();
        let start = (self.head as usize + HISTORY_LEN - n) % HISTORY_LEN;
        (0..n).map(|k| self.values[(start + k) % HISTORY_LEN]).collect()
    }
}

/// Population standard deviation; exactly zero for constant input.
pub fn population_std<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() || values.iter().all(|&v| v == values[0]) {
        return T::zero();
    }
    let n = T::of(values.len() as f64);
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    var.sqrt()
}

/// Smoothness penalty `-xi * std(B)`, zero for an empty buffer.
pub fn reward_smoothness<T: Scalar>(history: &[T], cfg: &RewardConfig<T>) -> T {
    if history.is_empty() {
        return T::zero();
    }
    -cfg.xi * population_std(history)
}

pub const CRASH_REWARD: f64 = -1.0;

pub fn total_reward<T: Scalar>(crashed: bool, r_pos: T, r_sm: T) -> T {
    if crashed {
        T::of(CRASH_REWARD)
    } else {
        r_pos + r_sm
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_pos: f64,
    pub r_sm: f64,
    pub r_cr: f64,
    pub r_total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeStatus {
    Continue,
    Success,
    Failure,
}

pub const FULL_SCALE_SUCCESS_THRESHOLD: f64 = 1000.0;

pub fn episode_status(cumulative_reward: f64, crashed: bool, success_threshold: f64) -> EpisodeStatus {
    if crashed {
        EpisodeStatus::Failure
    } else if cumulative_reward >= success_threshold {
        EpisodeStatus::Success
    } else {
        EpisodeStatus::Continue
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Point,
    pub heading: f64,
    pub speed: f64,
    pub steering: f64,
    pub step_index: u64,
}

/// Everything the transition function reads: the vehicle plus the
/// steering history that feeds the smoothness penalty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub vehicle: VehicleState,
    pub history: ActionHistory,
}

impl SimState {
    pub fn at_rest(position: Point, heading: f64, speed: f64) -> Self {
        Self {
            vehicle: VehicleState {
                position,
                heading,
                speed,
                steering: 0.0,
                step_index: 0,
            },
            history: ActionHistory::new(),
        }
    }

    fn is_finite(&self) -> bool {
        let v = &self.vehicle;
        v.position[0].is_finite() && v.position[1].is_finite() && v.heading.is_finite() && v.speed.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub const CROSS_TRACK: usize = N_RAYS;
    pub const HEADING_ERROR: usize = N_RAYS + 1;
    pub const PREV_ACTION: usize = N_RAYS + 2;
    pub const SPEED: usize = N_RAYS + 3;

    /// Valid range of component `i`.
    pub fn bounds(i: usize) -> (f64, f64) {
        match i {
            i if i < N_RAYS => (0.0, 1.0),
            Self::SPEED => (0.0, 1.0),
            _ => (-1.0, 1.0),
        }
    }

    pub fn rays(&self) -> &[f64] {
        &self.0[..N_RAYS]
    }

    pub fn cross_track(&self) -> f64 {
        self.0[Self::CROSS_TRACK]
    }

    pub fn clamp_to_bounds(&mut self) {
        for (i, v) in self.0.iter_mut().enumerate() {
            let (lo, hi) = Self::bounds(i);
            *v = if v.is_nan() { lo } else { v.clamp(lo, hi) };
        }
    }

    pub fn to_scalars<T: Scalar>(&self) -> [T; OBS_DIM] {
        self.0.map(T::of)
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut r = a % tau;
    if r > std::f64::consts::PI {
        r -= tau;
    } else if r <= -std::f64::consts::PI {
        r += tau;
    }
    r
}

pub fn observe(state: &SimState, track: &Track) -> Observation {
    let v = &state.vehicle;
    let mut o = [0.0; OBS_DIM];
    for (k, b) in RAY_BEARINGS.iter().enumerate() {
        o[k] = track.ray_distance(v.position, v.heading + b, RAY_RANGE) / RAY_RANGE;
    }
    let (offset, tangent_heading, _) = track.frenet(v.position);
    o[Observation::CROSS_TRACK] = offset / track.half_width();
    o[Observation::HEADING_ERROR] = wrap_angle(v.heading - tangent_heading) / std::f64::consts::PI;
    o[Observation::PREV_ACTION] = v.steering / MAX_STEERING;
    o[Observation::SPEED] = (v.speed - SPEED_MIN) / (SPEED_MAX - SPEED_MIN);
    let mut obs = Observation(o);
    obs.clamp_to_bounds();
    obs
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: SimState,
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub crashed: bool,
}

/// Pure transition function of the simulator.
pub fn step(state: &SimState, action: usize, track: &Track, cfg: &RewardConfig, dt: f64) -> Result<StepOutcome> {
    if !state.is_finite() {
        return Err(Error::SimulatorFault(format!("non-finite state {:?}", state.vehicle)));
    }
    let steering = action_to_steering(action)?;
    let v = &state.vehicle;
    let heading = v.heading + (v.speed / WHEELBASE) * steering.tan() * dt;
    let (s, c) = heading.sin_cos();
    let position = [v.position[0] + v.speed * dt * c, v.position[1] + v.speed * dt * s];
    let mut history = state.history;
    history.push(steering);
    let next = SimState {
        vehicle: VehicleState {
            position,
            heading,
            speed: v.speed,
            steering,
            step_index: v.step_index + 1,
        },
        history,
    };
    if !next.is_finite() {
        return Err(Error::SimulatorFault(format!("step produced non-finite state {:?}", next.vehicle)));
    }
    let distance = track.nearest_distance(position);
    let crashed = distance > track.half_width() || track.hits_obstacle(position);
    let r_pos = reward_position(distance, cfg);
    let r_sm = reward_smoothness(&history.values(), cfg);
    let r_total = total_reward(crashed, r_pos, r_sm);
    Ok(StepOutcome {
        state: next,
        observation: observe(&next, track),
        reward: RewardBreakdown {
            r_pos,
            r_sm,
            r_cr: if crashed { CRASH_REWARD } else { 0.0 },
            r_total,
        },
        crashed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub dt: f64,
    pub success_threshold: f64,
    /// Episodes are cut (without a terminal flag) after this many steps.
    pub max_episode_steps: u64,
    /// Uniform half-range of the lateral start offset (meters).
    pub start_offset: f64,
    /// Uniform half-range of the start heading perturbation (radians).
    pub start_heading_noise: f64,
    pub reward: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: DT,
            success_threshold: 300.0,
            max_episode_steps: 1500,
            start_offset: 0.5,
            start_heading_noise: 0.1,
            reward: RewardConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvStep {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub crashed: bool,
    pub status: EpisodeStatus,
    pub truncated: bool,
    pub cumulative_reward: f64,
}

impl EnvStep {
    pub fn terminal(&self) -> bool {
        self.status != EpisodeStatus::Continue
    }

    pub fn episode_over(&self) -> bool {
        self.terminal() || self.truncated
    }
}

/// Episodic wrapper: seeded resets, cumulative reward and termination.
#[derive(Clone, Debug)]
pub struct TrackEnv {
    track: Arc<Track>,
    cfg: EnvConfig,
    seed: u64,
    episode: u64,
    state: SimState,
    observation: Observation,
    cumulative: f64,
    steps: u64,
}

impl TrackEnv {
    pub fn new(track: Arc<Track>, cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.reward.validate()?;
        if !(cfg.dt > 0.0) {
            return Err(Error::Config(format!("env.dt must be > 0, got {}", cfg.dt)));
        }
        let (p, h) = track.start_pose();
        let state = SimState::at_rest(p, h, SPEED_MIN);
        let observation = observe(&state, &track);
        Ok(Self {
            track,
            cfg,
            seed,
            episode: 0,
            state,
            observation,
            cumulative: 0.0,
            steps: 0,
        })
    }

    pub fn track(&self) -> &Arc<Track> {
        &self.track
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn cumulative_reward(&self) -> f64 {
        self.cumulative
    }

    /// Start the next episode. The episode's speed and start perturbation
    /// depend only on `(seed, episode index)`.
    pub fn reset(&mut self) -> Observation {
        self.episode += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ self.episode);
        let speed = rng.gen_range(SPEED_MIN..=SPEED_MAX);
        let lateral = if self.cfg.start_offset > 0.0 {
            rng.gen_range(-self.cfg.start_offset..=self.cfg.start_offset)
        } else {
            0.0
        };
        let dh = if self.cfg.start_heading_noise > 0.0 {
            rng.gen_range(-self.cfg.start_heading_noise..=self.cfg.start_heading_noise)
        } else {
            0.0
        };
        let (p, h) = self.track.start_pose();
        let position = [p[0] - h.sin() * lateral, p[1] + h.cos() * lateral];
        self.state = SimState::at_rest(position, h + dh, speed);
        self.observation = observe(&self.state, &self.track);
        self.cumulative = 0.0;
        self.steps = 0;
        self.observation
    }

    /// Restore an exact simulator state (used by replays and counterfactuals).
    pub fn set_state(&mut self, state: SimState, cumulative: f64) {
        self.state = state;
        self.observation = observe(&state, &self.track);
        self.cumulative = cumulative;
        self.steps = state.vehicle.step_index;
    }

    pub fn step(&mut self, action: usize) -> Result<EnvStep> {
        let out = step(&self.state, action, &self.track, &self.cfg.reward, self.cfg.dt)?;
        self.state = out.state;
        self.observation = out.observation;
        self.cumulative += out.reward.r_total;
        self.steps += 1;
        let status = episode_status(self.cumulative, out.crashed, self.cfg.success_threshold);
        let truncated = status == EpisodeStatus::Continue && self.steps >= self.cfg.max_episode_steps;
        Ok(EnvStep {
            observation: out.observation,
            reward: out.reward,
            crashed: out.crashed,
            status,
            truncated,
            cumulative_reward: self.cumulative,
        })
    }
}
