//! Dense dueling Q-approximator with hand-written backprop.

mod codec;
mod dense;
mod dueling;
mod gradcheck;
mod optim;

pub use codec::{Reader, Writer};
pub use dense::{gaussian, Activation, Dense, Mlp, MlpTrace, TrainNoise};
pub use dueling::{argmax, loss_and_gradients, DuelingNet, DuelingTrace, Heads, ParamBlock, TRUNK};
pub use gradcheck::{finite_diff_check, finite_diff_check_with, relative_error, GradBatch, GradCheckReport, FD_STEP};
pub use optim::{soft_update, AdamConfig, AdamState};

use crate::scalar::Scalar;

/// Online nets and their target copies for clipped double Q-learning.
#[derive(Clone, Debug, PartialEq)]
pub struct DuelingNetPair<T> {
    pub q1: DuelingNet<T>,
    pub q2: DuelingNet<T>,
    pub target1: DuelingNet<T>,
    pub target2: DuelingNet<T>,
}

impl<T: Scalar> DuelingNetPair<T> {
    /// Two independently initialised nets; targets start as exact copies.
    pub fn new(seed: u64) -> Self {
        let q1 = DuelingNet::standard(seed.wrapping_mul(2).wrapping_add(1));
        let q2 = DuelingNet::standard(seed.wrapping_mul(2).wrapping_add(2));
        Self::from_online(q1, q2)
    }

    pub fn from_online(q1: DuelingNet<T>, q2: DuelingNet<T>) -> Self {
        Self {
            target1: q1.clone(),
            target2: q2.clone(),
            q1,
            q2,
        }
    }
}
