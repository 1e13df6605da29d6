use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Nesterov momentum (Nadam).
    #[serde(default)]
    pub nesterov: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.00025,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            nesterov: false,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn nadam(lr: f64) -> Self {
        Self {
            lr,
            nesterov: true,
            ..Self::default()
        }
    }
}

/// Per-parameter moments and step counter of a bias-corrected Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub cfg: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                got: params.len(),
            });
        }
        if grads.len() != params.len() {
            return Err(Error::Shape {
                expected: params.len(),
                got: grads.len(),
            });
        }
        self.t += 1;
        let c = self.cfg;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let eps = T::of(c.eps);
        let lr = T::of(c.lr);
        let inv_bc2 = T::of(1.0 / bc2);
        // Nadam look-ahead weights on the momentum and the raw gradient
        let (mw, gw) = if c.nesterov {
            let bc1_next = 1.0 - c.beta1.powi(t + 1);
            (T::of(c.beta1 / bc1_next), T::of((1.0 - c.beta1) / bc1))
        } else {
            (T::of(1.0 / bc1), T::zero())
        };
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + ob1 * g;
            *v = b2 * *v + ob2 * g * g;
            let m_hat = mw * *m + gw * g;
            let v_hat = *v * inv_bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn soft_update<T: Scalar>(target: &mut [T], online: &[T], tau: T) -> Result<()> {
    if target.len() != online.len() {
        return Err(Error::Shape {
            expected: target.len(),
            got: online.len(),
        });
    }
    if !(tau >= T::zero() && tau <= T::one()) {
        return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
    }
    if tau == T::one() {
        target.copy_from_slice(online);
        return Ok(());
    }
    if tau == T::zero() {
        return Ok(());
    }
    let keep = T::one() - tau;
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * o + keep * *t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = AdamState::<f64>::new(3, AdamConfig::default());
        let mut p = vec![0.5, -1.0, 2.0];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::<f64>::new(1, AdamConfig::with_lr(0.1));
        let mut p = vec![0.0];
        s.step(&mut p, &[1.0]).unwrap();
        // m_hat = 1, v_hat = 1  =>  p = -0.1 / (1 + 1e-8)
        assert!((p[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = AdamState::<f32>::new(2, AdamConfig::nadam(0.01));
            let mut p = vec![1.0f32, -1.0];
            for k in 0..10 {
                s.step(&mut p, &[k as f32 * 0.1, -0.3]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn soft_update_examples() {
        let mut t = vec![0.0f64];
        soft_update(&mut t, &[1.0], 0.0075).unwrap();
        assert!((t[0] - 0.0075).abs() < 1e-15);
        let mut t = vec![0.3, 0.4];
        soft_update(&mut t, &[1.0, 2.0], 1.0).unwrap();
        assert_eq!(t, vec![1.0, 2.0]);
        soft_update(&mut t, &[9.0, 9.0], 0.0).unwrap();
        assert_eq!(t, vec![1.0, 2.0]);
        assert!(soft_update(&mut t, &[9.0, 9.0], 1.5).is_err());
    }

    #[test]
    fn soft_update_contracts_geometrically() {
        let online = vec![1.0f64, -2.0, 0.5];
        let mut target = vec![0.0f64; 3];
        let gap = |t: &[f64]| t.iter().zip(&online).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let mut prev = gap(&target);
        for _ in 0..50 {
            soft_update(&mut target, &online, 0.0075).unwrap();
            let g = gap(&target);
            assert!((g / prev - (1.0 - 0.0075)).abs() < 1e-9);
            prev = g;
        }
    }
}
