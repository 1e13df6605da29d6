use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{blend_action, Learner, TrainStats};
use crate::env::{EpisodeStatus, TrackEnv, N_RAYS};
use crate::error::{Error, Result};
use crate::intervention::{Gate, GateCounter, InterventionSchedule, InterventionSource};
use crate::replay::{EvalRecord, SharedStore, Transition, NO_HUMAN};

/// One line of the metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub steps: u64,
    /// Global step count when the episode ended.
    pub end_step: u64,
    pub cumulative_reward: f64,
    pub crashed: bool,
    pub success: bool,
    pub truncated: bool,
    pub lambda_h: f64,
    pub epsilon: f64,
    pub interventions_used: u64,
}

/// Read-only state published after every step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepSnapshot {
    pub step: u64,
    pub episode: u64,
    pub pose: [f64; 3],
    pub rays: [f64; N_RAYS],
    pub reward: f64,
    pub cum_reward: f64,
    pub lambda_h: f64,
    pub epsilon: f64,
    pub gate: Gate,
    pub intervened: bool,
    pub action: usize,
    pub episode_over: bool,
}

pub trait RunObserver {
    /// Whether [`RunObserver::on_step`] should be called at all.
    fn wants_steps(&self) -> bool {
        false
    }

    fn on_step(&mut self, _snap: &StepSnapshot) -> Result<()> {
        Ok(())
    }

    fn on_episode(&mut self, _m: &EpisodeMetrics) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _step: u64, _snapshot: &[u8]) -> Result<()> {
        Ok(())
    }
}

pub struct NullObserver;

impl RunObserver for NullObserver {}

/// Where a run writes its by-products. Every field is optional.
pub struct Sinks<'a> {
    pub metrics: Option<&'a mut dyn Write>,
    pub store: Option<&'a SharedStore>,
    pub observer: &'a mut dyn RunObserver,
    /// Checkpoint every this many steps (0 = only at the end and on faults).
    pub checkpoint_every: u64,
}

impl<'a> Sinks<'a> {
    pub fn none(observer: &'a mut dyn RunObserver) -> Self {
        Self {
            metrics: None,
            store: None,
            observer,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub episodes: Vec<EpisodeMetrics>,
    pub total_steps: u64,
    pub intervened_steps: u64,
    pub windows_used: u64,
    pub train_steps: u64,
    pub last_stats: Option<TrainStats>,
}

impl RunReport {
    /// Mean return of episodes that ended after `from_step`; falls back to
    /// the last episode when none did.
    pub fn mean_return_after(&self, from_step: u64) -> Option<f64> {
        mean_return_after(&self.episodes, from_step)
    }
}

pub fn mean_return_after(episodes: &[EpisodeMetrics], from_step: u64) -> Option<f64> {
    let tail: Vec<f64> = episodes
        .iter()
        .filter(|e| e.end_step > from_step)
        .map(|e| e.cumulative_reward)
        .collect();
    if tail.is_empty() {
        episodes.last().map(|e| e.cumulative_reward)
    } else {
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

fn write_line<W: Write + ?Sized, S: Serialize>(w: &mut W, value: &S) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::InternalFault(e.to_string()))?;
    writeln!(w, "{line}").map_err(|e| Error::storage("metrics", e))
}

/// The interactive training loop. Per step: epsilon-greedy action, gate
/// check, human poll, blend, environment step, store, and a gradient step
/// every `train_every` steps.
pub fn run_training<L: Learner + ?Sized>(
    env: &mut TrackEnv,
    source: &mut dyn InterventionSource,
    schedule: InterventionSchedule,
    learner: &mut L,
    total_steps: u64,
    sinks: &mut Sinks<'_>,
) -> Result<RunReport> {
    schedule.validate()?;
    match run_inner(env, source, schedule, learner, total_steps, sinks) {
        Ok(r) => Ok(r),
        Err((step, e)) => {
            log::error!("run aborted at step {step}: {e}");
            sinks.observer.on_checkpoint(step, &learner.snapshot())?;
            Err(e)
        }
    }
}

fn run_inner<L: Learner + ?Sized>(
    env: &mut TrackEnv,
    source: &mut dyn InterventionSource,
    schedule: InterventionSchedule,
    learner: &mut L,
    total_steps: u64,
    sinks: &mut Sinks<'_>,
) -> std::result::Result<RunReport, (u64, Error)> {
    let cfg = learner.core_config().clone();
    let mut gate = GateCounter::new(schedule);
    let mut report = RunReport::default();
    let mut obs = env.reset();
    let mut ep_steps = 0u64;
    let mut ep_interventions = 0u64;
    for t in 0..total_steps {
        let at = |e: Error| (t, e);
        let eps = cfg.epsilon(t);
        let lambda = cfg.schedule.value(t);
        let a_agent = learner.act(&obs, eps).map_err(at)?;
        let g = gate.advance(t);
        let state = *env.state();
        let a_human = if g.is_open() {
            source.poll(t, &obs, &state).map_err(at)?
        } else {
            None
        };
        let intervened = a_human.is_some();
        let a = blend_action(a_agent, a_human, intervened).map_err(at)?;
        let step = env.step(a).map_err(at)?;
        let tr = Transition {
            s: obs,
            a_agent,
            a_human: a_human.map_or(NO_HUMAN, |h| h as i32),
            r: step.reward.r_total,
            s_next: step.observation,
            done: step.crashed,
            intervened,
            lambda_h: lambda,
        };
        learner.remember(tr).map_err(at)?;
        if let Some(store) = sinks.store {
            store
                .append(EvalRecord {
                    episode: env.episode(),
                    step: t,
                    transition: tr,
                    crashed: step.crashed,
                    sim: Some(state),
                })
                .map_err(at)?;
        }
        ep_steps += 1;
        if intervened {
            ep_interventions += 1;
            report.intervened_steps += 1;
        }
        if (t + 1) % cfg.train_every == 0 {
            if let Some(s) = learner.train().map_err(at)? {
                report.last_stats = Some(s);
                report.train_steps += 1;
            }
        }
        if sinks.observer.wants_steps() {
            let v = &env.state().vehicle;
            let mut rays = [0.0; N_RAYS];
            rays.copy_from_slice(step.observation.rays());
            let snap = StepSnapshot {
                step: t,
                episode: env.episode(),
                pose: [v.position[0], v.position[1], v.heading],
                rays,
                reward: step.reward.r_total,
                cum_reward: step.cumulative_reward,
                lambda_h: lambda,
                epsilon: eps,
                gate: g,
                intervened,
                action: a,
                episode_over: step.episode_over(),
            };
            sinks.observer.on_step(&snap).map_err(at)?;
        }
        obs = step.observation;
        if step.episode_over() {
            let m = EpisodeMetrics {
                episode: env.episode(),
                steps: ep_steps,
                end_step: t + 1,
                cumulative_reward: step.cumulative_reward,
                crashed: step.crashed,
                success: step.status == EpisodeStatus::Success,
                truncated: step.truncated,
                lambda_h: lambda,
                epsilon: eps,
                interventions_used: ep_interventions,
            };
            if let Some(w) = sinks.metrics.as_deref_mut() {
                write_line(w, &m).map_err(at)?;
            }
            sinks.observer.on_episode(&m).map_err(at)?;
            report.episodes.push(m);
            obs = env.reset();
            ep_steps = 0;
            ep_interventions = 0;
        }
        if sinks.checkpoint_every > 0 && (t + 1) % sinks.checkpoint_every == 0 {
            sinks.observer.on_checkpoint(t + 1, &learner.snapshot()).map_err(at)?;
        }
    }
    report.total_steps = total_steps;
    report.windows_used = gate.windows_used;
    if let Some(w) = sinks.metrics.as_deref_mut() {
        w.flush().map_err(|e| (total_steps, Error::storage("metrics", e)))?;
    }
    Ok(report)
}
