//! Central finite-difference verification of the dueling net gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dueling::{loss_and_gradients, DuelingNet, ParamBlock};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-4;
/// Magnitudes below this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-7;

/// A fixed regression batch for the weighted TD loss.
#[derive(Clone, Debug)]
pub struct GradBatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GradBatch {
    pub fn random(net: &DuelingNet<f64>, size: usize, rng: &mut ChaCha8Rng) -> Self {
        let obs = (0..size)
            .map(|_| (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        Self {
            obs,
            actions: (0..size).map(|_| rng.gen_range(0..net.n_actions())).collect(),
            targets: (0..size).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            weights: (0..size).map(|_| rng.gen_range(0.05..1.0)).collect(),
        }
    }

    pub fn loss(&self, net: &DuelingNet<f64>) -> Result<f64> {
        Ok(loss_and_gradients(net, &self.obs, &self.actions, &self.targets, &self.weights)?.0)
    }

    fn pattern(&self, net: &DuelingNet<f64>) -> Result<Vec<bool>> {
        let mut all = Vec::new();
        for o in &self.obs {
            all.extend(net.activation_pattern(o)?);
        }
        Ok(all)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probes: usize,
    /// Probes redrawn because the perturbation crossed a rectifier kink.
    pub skipped: usize,
    pub probes_per_block: [usize; 3],
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Check the analytic gradient of the weighted TD loss on a random batch.
pub fn finite_diff_check(net: &DuelingNet<f64>, n_probes: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = GradBatch::random(net, 16, &mut rng);
    finite_diff_check_with(net, &batch, n_probes, &mut rng, |n, b| {
        Ok(loss_and_gradients(n, &b.obs, &b.actions, &b.targets, &b.weights)?.1)
    })
}

/// Same as [`finite_diff_check`] with an explicit batch and gradient routine.
/// Probes cycle through trunk, value head and advantage head.
pub fn finite_diff_check_with<F>(
    net: &DuelingNet<f64>,
    batch: &GradBatch,
    n_probes: usize,
    rng: &mut ChaCha8Rng,
    gradient: F,
) -> Result<GradCheckReport>
where
    F: Fn(&DuelingNet<f64>, &GradBatch) -> Result<Vec<f64>>,
{
    assert!(n_probes >= 1, "need at least one probe");
    let analytic = gradient(net, batch)?;
    let base_pattern = batch.pattern(net)?;
    let blocks = [ParamBlock::Trunk, ParamBlock::Value, ParamBlock::Advantage];
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        probes: 0,
        skipped: 0,
        probes_per_block: [0; 3],
    };
    let mut attempts = 0;
    while report.probes < n_probes {
        attempts += 1;
        assert!(attempts < n_probes * 20, "too many probes straddle rectifier kinks");
        let b = report.probes % 3;
        let range = net.block_range(blocks[b]);
        let idx = rng.gen_range(range);
        let mut probe = net.clone();
        let orig = probe.params()[idx];
        probe.params_mut()[idx] = orig + FD_STEP;
        let up_pattern = batch.pattern(&probe)?;
        let up = batch.loss(&probe)?;
        probe.params_mut()[idx] = orig - FD_STEP;
        let down_pattern = batch.pattern(&probe)?;
        let down = batch.loss(&probe)?;
        if up_pattern != base_pattern || down_pattern != base_pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(analytic[idx], numeric);
        report.max_relative_error = report.max_relative_error.max(err);
        report.probes += 1;
        report.probes_per_block[b] += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_net_passes() {
        let net = DuelingNet::<f64>::standard(11);
        let r = finite_diff_check(&net, 100, 5).unwrap();
        assert_eq!(r.probes, 100);
        assert!(r.max_relative_error < 1e-4, "{r:?}");
        assert!(r.probes_per_block.iter().all(|&c| c >= 33));
    }

    #[test]
    fn sign_flip_is_detected() {
        let net = DuelingNet::<f64>::standard(11);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = GradBatch::random(&net, 16, &mut rng);
        let r = finite_diff_check_with(&net, &batch, 30, &mut rng, |n, b| {
            let mut g = loss_and_gradients(n, &b.obs, &b.actions, &b.targets, &b.weights)?.1;
            g.iter_mut().for_each(|v| *v = -*v);
            Ok(g)
        })
        .unwrap();
        assert!(r.max_relative_error > 1e-2, "{r:?}");
    }

    #[test]
    fn degenerate_zero_net() {
        let mut net = DuelingNet::<f64>::standard(0);
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let batch = GradBatch {
            obs: vec![vec![0.0; net.input_dim()]; 4],
            actions: vec![0, 5, 9, 32],
            targets: vec![0.0; 4],
            weights: vec![1.0; 4],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = finite_diff_check_with(&net, &batch, 10, &mut rng, |n, b| {
            Ok(loss_and_gradients(n, &b.obs, &b.actions, &b.targets, &b.weights)?.1)
        })
        .unwrap();
        assert_eq!(r.max_relative_error, 0.0);
    }
}
