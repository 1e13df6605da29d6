//! Dueling Q-network: shared rectifier trunk, scalar value head and a
//! mean-centred advantage head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::Dense;
use crate::env::{N_ACTIONS, OBS_DIM};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const TRUNK: [usize; 3] = [OBS_DIM, 128, 128];

#[derive(Clone, Debug, PartialEq)]
pub struct DuelingNet<T> {
    trunk_sizes: Vec<usize>,
    n_actions: usize,
    trunk: Vec<Dense>,
    value: Dense,
    advantage: Dense,
    params: Vec<T>,
}

/// Head outputs for one state.
#[derive(Clone, Debug, PartialEq)]
pub struct Heads<T> {
    pub value: T,
    pub advantage: Vec<T>,
    pub q: Vec<T>,
}

/// Forward activations kept for backprop.
#[derive(Clone, Debug)]
pub struct DuelingTrace<T> {
    /// Input of each trunk layer plus the trunk output (`acts.len() == trunk.len() + 1`).
    acts: Vec<Vec<T>>,
    pub q: Vec<T>,
}

/// Which block a parameter index belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamBlock {
    Trunk,
    Value,
    Advantage,
}

impl<T: Scalar> DuelingNet<T> {
    pub fn new(trunk_sizes: &[usize], n_actions: usize, seed: u64) -> Self {
        assert!(trunk_sizes.len() >= 2, "trunk needs input and at least one hidden layer");
        let mut offset = 0;
        let trunk = Dense::chain(trunk_sizes, &mut offset);
        let width = *trunk_sizes.last().expect("non-empty");
        let value = Dense::chain(&[width, 1], &mut offset)[0];
        let advantage = Dense::chain(&[width, n_actions], &mut offset)[0];
        let mut params = vec![T::zero(); offset];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in trunk.iter().chain([&value, &advantage]) {
            l.init(&mut params, &mut rng);
        }
        Self {
            trunk_sizes: trunk_sizes.to_vec(),
            n_actions,
            trunk,
            value,
            advantage,
            params,
        }
    }

    /// `[13, 128, 128]` trunk with 33 actions.
    pub fn standard(seed: u64) -> Self {
        Self::new(&TRUNK, N_ACTIONS, seed)
    }

    pub fn trunk_sizes(&self) -> &[usize] {
        &self.trunk_sizes
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn input_dim(&self) -> usize {
        self.trunk_sizes[0]
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.trunk_sizes == other.trunk_sizes && self.n_actions == other.n_actions
    }

    pub fn set_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn block_of(&self, index: usize) -> ParamBlock {
        if self.value.range().contains(&index) {
            ParamBlock::Value
        } else if self.advantage.range().contains(&index) {
            ParamBlock::Advantage
        } else {
            ParamBlock::Trunk
        }
    }

    pub fn block_range(&self, block: ParamBlock) -> std::ops::Range<usize> {
        match block {
            ParamBlock::Trunk => 0..self.value.w,
            ParamBlock::Value => self.value.range(),
            ParamBlock::Advantage => self.advantage.range(),
        }
    }

    /// Biases of the advantage head; shifting them all by a constant shifts
    /// every advantage output by that constant.
    pub fn advantage_bias_mut(&mut self) -> &mut [T] {
        let r = self.advantage.b..self.advantage.b + self.advantage.n_out;
        &mut self.params[r]
    }

    fn check_input(&self, obs: &[T]) -> Result<()> {
        if obs.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: obs.len(),
            });
        }
        Ok(())
    }

    fn trunk_forward(&self, obs: &[T], mut keep: Option<&mut Vec<Vec<T>>>) -> Vec<T> {
        let mut h = obs.to_vec();
        for l in &self.trunk {
            let mut out = vec![T::zero(); l.n_out];
            l.forward(&self.params, &h, &mut out);
            for v in &mut out {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
            if let Some(k) = keep.as_deref_mut() {
                k.push(std::mem::replace(&mut h, out));
            } else {
                h = out;
            }
        }
        if let Some(k) = keep {
            k.push(h.clone());
        }
        h
    }

    fn heads_from(&self, h: &[T]) -> Heads<T> {
        let mut v = [T::zero()];
        self.value.forward(&self.params, h, &mut v);
        let mut advantage = vec![T::zero(); self.n_actions];
        self.advantage.forward(&self.params, h, &mut advantage);
        let mean = advantage.iter().copied().sum::<T>() / T::of(self.n_actions as f64);
        let q = advantage.iter().map(|&a| v[0] + (a - mean)).collect();
        Heads {
            value: v[0],
            advantage,
            q,
        }
    }

    pub fn heads(&self, obs: &[T]) -> Result<Heads<T>> {
        self.check_input(obs)?;
        let h = self.trunk_forward(obs, None);
        Ok(self.heads_from(&h))
    }

    pub fn q_values(&self, obs: &[T]) -> Result<Vec<T>> {
        Ok(self.heads(obs)?.q)
    }

    pub fn forward_batch<O: AsRef<[T]>>(&self, batch: &[O]) -> Result<Vec<Vec<T>>> {
        batch.iter().map(|o| self.q_values(o.as_ref())).collect()
    }

    /// Greedy action; the lowest index wins ties.
    pub fn greedy(&self, obs: &[T]) -> Result<usize> {
        Ok(argmax(&self.q_values(obs)?))
    }

    pub fn trace(&self, obs: &[T]) -> Result<DuelingTrace<T>> {
        self.check_input(obs)?;
        let mut acts = Vec::with_capacity(self.trunk.len() + 1);
        let h = self.trunk_forward(obs, Some(&mut acts));
        let q = self.heads_from(&h).q;
        Ok(DuelingTrace { acts, q })
    }

    /// Rectifier on/off pattern of the trunk for `obs`.
    pub fn activation_pattern(&self, obs: &[T]) -> Result<Vec<bool>> {
        let t = self.trace(obs)?;
        Ok(t.acts[1..].iter().flatten().map(|&v| v > T::zero()).collect())
    }

    /// Accumulate `dL/dθ` into `grads` given `dL/dQ` for every action.
    pub fn backward(&self, trace: &DuelingTrace<T>, d_q: &[T], grads: &mut [T]) {
        debug_assert_eq!(d_q.len(), self.n_actions);
        let d_value = d_q.iter().copied().sum::<T>();
        let mean = d_value / T::of(self.n_actions as f64);
        let d_adv: Vec<T> = d_q.iter().map(|&d| d - mean).collect();
        let h = trace.acts.last().expect("trunk output");
        let width = h.len();
        let mut d_h = vec![T::zero(); width];
        let mut d_h_adv = vec![T::zero(); width];
        self.value.backward(&self.params, h, &[d_value], grads, Some(&mut d_h));
        self.advantage.backward(&self.params, h, &d_adv, grads, Some(&mut d_h_adv));
        for (a, b) in d_h.iter_mut().zip(&d_h_adv) {
            *a += *b;
        }
        let mut delta = d_h;
        for k in (0..self.trunk.len()).rev() {
            let l = &self.trunk[k];
            // rectifier derivative read from the layer output
            let out = &trace.acts[k + 1];
            for (d, &o) in delta.iter_mut().zip(out) {
                if o <= T::zero() {
                    *d = T::zero();
                }
            }
            if k == 0 {
                l.backward(&self.params, &trace.acts[0], &delta, grads, None);
            } else {
                let mut d_in = vec![T::zero(); l.n_in];
                l.backward(&self.params, &trace.acts[k], &delta, grads, Some(&mut d_in));
                delta = d_in;
            }
        }
    }

    /// Convert to another scalar type.
    pub fn cast<U: Scalar>(&self) -> DuelingNet<U> {
        DuelingNet {
            trunk_sizes: self.trunk_sizes.clone(),
            n_actions: self.n_actions,
            trunk: self.trunk.clone(),
            value: self.value,
            advantage: self.advantage,
            params: self.params.iter().map(|p| U::of(p.f64())).collect(),
        }
    }
}

/// Index of the maximum; lowest index wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean of `w * (target - Q(s, a))^2` over the batch, with gradients that
/// flow only through each sample's selected action.
pub fn loss_and_gradients<T: Scalar, O: AsRef<[T]>>(
    net: &DuelingNet<T>,
    obs: &[O],
    actions: &[usize],
    targets: &[T],
    is_weights: &[T],
) -> Result<(f64, Vec<T>)> {
    let n = obs.len();
    for len in [actions.len(), targets.len(), is_weights.len()] {
        if len != n {
            return Err(Error::Shape { expected: n, got: len });
        }
    }
    if let Some((i, t)) = targets.iter().enumerate().find(|(_, t)| !t.is_finite()) {
        return Err(Error::TrainingFault(format!(
            "non-finite target {t} at batch index {i} (action {}, weight {})",
            actions[i], is_weights[i]
        )));
    }
    let mut grads = vec![T::zero(); net.n_params()];
    if n == 0 {
        return Ok((0.0, grads));
    }
    let scale = T::of(2.0 / n as f64);
    let mut loss = 0.0f64;
    let mut d_q = vec![T::zero(); net.n_actions()];
    for k in 0..n {
        let a = actions[k];
        if a >= net.n_actions() {
            return Err(Error::InvalidAction(a as i64));
        }
        let w = is_weights[k];
        if w == T::zero() {
            continue;
        }
        let trace = net.trace(obs[k].as_ref())?;
        let err = targets[k] - trace.q[a];
        loss += w.f64() * err.f64() * err.f64();
        d_q.iter_mut().for_each(|d| *d = T::zero());
        d_q[a] = -scale * w * err;
        net.backward(&trace, &d_q, &mut grads);
    }
    Ok((loss / n as f64, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dimension_and_shape_error() {
        let net = DuelingNet::<f32>::standard(1);
        assert_eq!(net.q_values(&[0.1; OBS_DIM]).unwrap().len(), N_ACTIONS);
        assert!(matches!(net.q_values(&[0.1; 5]), Err(Error::Shape { .. })));
    }

    #[test]
    fn constant_advantage_gives_value() {
        let mut net = DuelingNet::<f64>::new(&[4, 8], 5, 2);
        let r = net.block_range(ParamBlock::Advantage);
        for p in &mut net.params_mut()[r] {
            *p = 0.0;
        }
        net.advantage_bias_mut().iter_mut().for_each(|b| *b = 0.7);
        let heads = net.heads(&[0.5, -0.1, 0.2, 0.9]).unwrap();
        for q in heads.q {
            assert_eq!(q, heads.value);
        }
    }

    #[test]
    fn perfect_fit_and_zero_weights_give_zero() {
        let net = DuelingNet::<f64>::standard(4);
        let obs = vec![vec![0.2; OBS_DIM], vec![-0.4; OBS_DIM]];
        let actions = [3, 30];
        let targets: Vec<f64> = obs
            .iter()
            .zip(actions)
            .map(|(o, a)| net.q_values(o).unwrap()[a])
            .collect();
        let (loss, g) = loss_and_gradients(&net, &obs, &actions, &targets, &[1.0, 0.5]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));

        let (loss, g) = loss_and_gradients(&net, &obs, &actions, &[5.0, -5.0], &[0.0, 0.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_target_is_a_training_fault() {
        let net = DuelingNet::<f32>::standard(4);
        let obs = vec![vec![0.0f32; OBS_DIM]];
        let err = loss_and_gradients(&net, &obs, &[1], &[f32::NAN], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::TrainingFault(ref m) if m.contains("batch index 0")));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f32; 33]), 0);
    }
}
