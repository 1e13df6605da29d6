//! Flat-parameter dense layers and a plain multilayer perceptron.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Mish,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Mish => x * softplus(x).tanh(),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Mish => {
                let sp = softplus(x);
                let t = sp.tanh();
                let sig = T::one() / (T::one() + (-x).exp());
                t + x * (T::one() - t * t) * sig
            }
        }
    }
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow
    if x > T::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Shape and parameter offsets of one affine layer. Weights are stored
/// input-major (`w[i * n_out + j]` connects input `i` to output `j`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
}

impl Dense {
    pub fn n_params(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }

    /// Lay out layers back to back starting at `offset`.
    pub fn chain(sizes: &[usize], offset: &mut usize) -> Vec<Dense> {
        sizes
            .windows(2)
            .map(|s| {
                let d = Dense {
                    n_in: s[0],
                    n_out: s[1],
                    w: *offset,
                    b: *offset + s[0] * s[1],
                };
                *offset += d.n_params();
                d
            })
            .collect()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.w..self.b + self.n_out
    }

    #[inline]
    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.n_in);
        debug_assert_eq!(out.len(), self.n_out);
        out.copy_from_slice(&params[self.b..self.b + self.n_out]);
        let w = &params[self.w..self.w + self.n_in * self.n_out];
        for (xi, row) in x.iter().zip(w.chunks_exact(self.n_out)) {
            if *xi == T::zero() {
                continue;
            }
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += *xi * wij;
            }
        }
    }

    /// Accumulate parameter gradients for `d_out` and optionally return the
    /// gradient with respect to the input.
    #[inline]
    pub fn backward<T: Scalar>(&self, params: &[T], x: &[T], d_out: &[T], grads: &mut [T], d_in: Option<&mut [T]>) {
        for (g, &d) in grads[self.b..self.b + self.n_out].iter_mut().zip(d_out) {
            *g += d;
        }
        let gw = &mut grads[self.w..self.w + self.n_in * self.n_out];
        for (xi, grow) in x.iter().zip(gw.chunks_exact_mut(self.n_out)) {
            if *xi == T::zero() {
                continue;
            }
            for (g, &d) in grow.iter_mut().zip(d_out) {
                *g += *xi * d;
            }
        }
        if let Some(d_in) = d_in {
            let w = &params[self.w..self.w + self.n_in * self.n_out];
            for (di, row) in d_in.iter_mut().zip(w.chunks_exact(self.n_out)) {
                let mut acc = T::zero();
                for (&wij, &d) in row.iter().zip(d_out) {
                    acc += wij * d;
                }
                *di = acc;
            }
        }
    }

    /// He-uniform weights, zero biases.
    pub fn init<T: Scalar>(&self, params: &mut [T], rng: &mut ChaCha8Rng) {
        let limit = (6.0 / self.n_in as f64).sqrt();
        for p in &mut params[self.w..self.w + self.n_in * self.n_out] {
            *p = T::of(rng.gen_range(-limit..limit));
        }
        for p in &mut params[self.b..self.b + self.n_out] {
            *p = T::zero();
        }
    }
}

/// Intermediate values of one MLP forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct MlpTrace<T> {
    /// Input of every layer; `inputs[0]` is the (possibly noised) network input.
    pub inputs: Vec<Vec<T>>,
    /// Pre-activations of hidden layers.
    pub pre: Vec<Vec<T>>,
    /// Inverted-dropout scale per hidden unit (0 for dropped units).
    pub masks: Vec<Vec<T>>,
    pub output: Vec<T>,
}

/// Regularisation applied in training passes only.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainNoise {
    pub dropout: f64,
    pub input_noise: f64,
}

/// Fully connected network with a shared hidden activation and a linear
/// output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<Dense>,
    params: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output sizes");
        let mut offset = 0;
        let layers = Dense::chain(sizes, &mut offset);
        let mut params = vec![T::zero(); offset];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &layers {
            l.init(&mut params, &mut rng);
        }
        Self {
            sizes: sizes.to_vec(),
            activation,
            layers,
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
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

    pub fn n_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.n_in() {
            return Err(Error::Shape {
                expected: self.n_in(),
                got: x.len(),
            });
        }
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut out = vec![T::zero(); l.n_out];
            l.forward(&self.params, &h, &mut out);
            if k < last {
                for v in &mut out {
                    *v = self.activation.apply(*v);
                }
            }
            h = out;
        }
        Ok(h)
    }

    /// Forward pass that records everything needed by [`Mlp::backward`].
    pub fn trace<R: Rng>(&self, x: &[T], noise: TrainNoise, rng: &mut R) -> Result<MlpTrace<T>> {
        if x.len() != self.n_in() {
            return Err(Error::Shape {
                expected: self.n_in(),
                got: x.len(),
            });
        }
        let mut input = x.to_vec();
        if noise.input_noise > 0.0 {
            for v in &mut input {
                *v += T::of(gaussian(rng) * noise.input_noise);
            }
        }
        let last = self.layers.len() - 1;
        let mut inputs = vec![input];
        let mut pre = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        let keep = 1.0 - noise.dropout;
        for (k, l) in self.layers.iter().enumerate() {
            let mut out = vec![T::zero(); l.n_out];
            l.forward(&self.params, inputs.last().expect("input"), &mut out);
            if k == last {
                return Ok(MlpTrace {
                    inputs,
                    pre,
                    masks,
                    output: out,
                });
            }
            let mask: Vec<T> = (0..l.n_out)
                .map(|_| {
                    if noise.dropout > 0.0 {
                        if rng.gen::<f64>() < keep {
                            T::of(1.0 / keep)
                        } else {
                            T::zero()
                        }
                    } else {
                        T::one()
                    }
                })
                .collect();
            let act: Vec<T> = out
                .iter()
                .zip(&mask)
                .map(|(&z, &m)| self.activation.apply(z) * m)
                .collect();
            pre.push(out);
            masks.push(mask);
            inputs.push(act);
        }
        unreachable!("loop returns at the output layer")
    }

    pub fn backward(&self, trace: &MlpTrace<T>, d_out: &[T], grads: &mut [T]) {
        let mut delta = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            if k == 0 {
                l.backward(&self.params, &trace.inputs[0], &delta, grads, None);
                break;
            }
            let mut d_in = vec![T::zero(); l.n_in];
            l.backward(&self.params, &trace.inputs[k], &delta, grads, Some(&mut d_in));
            let pre = &trace.pre[k - 1];
            let mask = &trace.masks[k - 1];
            for ((d, &z), &m) in d_in.iter_mut().zip(pre).zip(mask) {
                *d *= self.activation.derivative(z) * m;
            }
            delta = d_in;
        }
    }
}

/// Standard normal draw (Box-Muller).
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mish_derivative_matches_differences() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (Activation::Mish.apply(x + h) - Activation::Mish.apply(x - h)) / (2.0 * h);
            assert!((fd - Activation::Mish.derivative(x)).abs() < 1e-7);
        }
    }

    #[test]
    fn mlp_backward_matches_differences() {
        let mlp = Mlp::<f64>::new(&[5, 7, 3], Activation::Mish, 3);
        let x = [0.3, -0.2, 0.9, 0.0, -1.1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = mlp.trace(&x, TrainNoise::default(), &mut rng).unwrap();
        // loss = sum(output * c)
        let c = [0.5, -1.0, 2.0];
        let mut grads = vec![0.0; mlp.params().len()];
        mlp.backward(&trace, &c, &mut grads);
        let loss = |m: &Mlp<f64>| m.forward(&x).unwrap().iter().zip(&c).map(|(o, c)| o * c).sum::<f64>();
        for i in (0..grads.len()).step_by(3) {
            let mut p = mlp.clone();
            p.params_mut()[i] += 1e-5;
            let up = loss(&p);
            p.params_mut()[i] -= 2e-5;
            let down = loss(&p);
            let fd = (up - down) / 2e-5;
            assert!((fd - grads[i]).abs() < 1e-6, "param {i}: {fd} vs {}", grads[i]);
        }
    }

    #[test]
    fn shape_errors() {
        let mlp = Mlp::<f32>::new(&[4, 2], Activation::Relu, 0);
        assert!(matches!(mlp.forward(&[0.0; 3]), Err(Error::Shape { expected: 4, got: 3 })));
    }
}
