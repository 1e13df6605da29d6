//! Interactive double deep Q-learning with human interventions.
//!
//! The crate bundles a deterministic top-down driving simulator, a dueling
//! Q-network trained with clipped double Q-learning and prioritized replay,
//! human-intervention blending in the TD update, imitation baselines, and an
//! offline module that rolls out counterfactual agent trajectories to judge
//! whether each intervention helped.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pick the precision used for training.

pub mod agent;
pub mod approximator;
pub mod checkpoint;
pub mod baselines;
pub mod env;
pub mod epm;
pub mod error;
pub mod intervention;
pub mod policy;
pub mod replay;
pub mod scalar;
pub mod track;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Precision used by trainers and checkpoints.
pub type Real = f32;

pub type Net = approximator::DuelingNet<Real>;
pub type NetPair = approximator::DuelingNetPair<Real>;
/// Double-precision net, used for gradient verification.
pub type Net64 = approximator::DuelingNet<f64>;
