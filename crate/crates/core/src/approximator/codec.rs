//! Little-endian binary encoding for networks and optimizer state.

use super::dense::{Activation, Mlp};
use super::dueling::DuelingNet;
use super::optim::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn scalars<T: Scalar>(&mut self, v: &[T]) {
        self.u64(v.len() as u64);
        for &x in v {
            x.write_le(&mut self.buf);
        }
    }

    pub fn sizes(&mut self, v: &[usize]) {
        self.u32(v.len() as u32);
        for &s in v {
            self.u32(s as u32);
        }
    }

    pub fn dueling<T: Scalar>(&mut self, net: &DuelingNet<T>) {
        self.sizes(net.trunk_sizes());
        self.u32(net.n_actions() as u32);
        self.scalars(net.params());
    }

    pub fn mlp<T: Scalar>(&mut self, net: &Mlp<T>) {
        self.sizes(net.sizes());
        self.u8(match net.activation() {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Mish => 2,
        });
        self.scalars(net.params());
    }

    pub fn adam<T: Scalar>(&mut self, s: &AdamState<T>) {
        self.f64(s.cfg.lr);
        self.f64(s.cfg.beta1);
        self.f64(s.cfg.beta2);
        self.f64(s.cfg.eps);
        self.u8(s.cfg.nesterov as u8);
        self.u64(s.t);
        self.scalars(&s.m);
        self.scalars(&s.v);
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Config(format!(
                "truncated data: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn scalars<T: Scalar>(&mut self) -> Result<Vec<T>> {
        let n = self.u64()? as usize;
        let w = T::WIDTH as usize;
        let raw = self.take(n.checked_mul(w).ok_or_else(|| Error::Config("length overflow".into()))?)?;
        Ok(raw.chunks_exact(w).map(T::read_le).collect())
    }

    pub fn sizes(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| Ok(self.u32()? as usize)).collect()
    }

    pub fn dueling<T: Scalar>(&mut self) -> Result<DuelingNet<T>> {
        let trunk = self.sizes()?;
        let n_actions = self.u32()? as usize;
        if trunk.len() < 2 || n_actions == 0 {
            return Err(Error::Config(format!("bad dueling architecture {trunk:?} x {n_actions}")));
        }
        let mut net = DuelingNet::new(&trunk, n_actions, 0);
        net.set_params(self.scalars()?)?;
        Ok(net)
    }

    pub fn mlp<T: Scalar>(&mut self) -> Result<Mlp<T>> {
        let sizes = self.sizes()?;
        let act = match self.u8()? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Mish,
            k => return Err(Error::Config(format!("unknown activation tag {k}"))),
        };
        if sizes.len() < 2 {
            return Err(Error::Config(format!("bad mlp sizes {sizes:?}")));
        }
        let mut net = Mlp::new(&sizes, act, 0);
        net.set_params(self.scalars()?)?;
        Ok(net)
    }

    pub fn adam<T: Scalar>(&mut self) -> Result<AdamState<T>> {
        let cfg = AdamConfig {
            lr: self.f64()?,
            beta1: self.f64()?,
            beta2: self.f64()?,
            eps: self.f64()?,
            nesterov: self.u8()? != 0,
        };
        let t = self.u64()?;
        let m = self.scalars()?;
        let v = self.scalars()?;
        if m.len() != v.len() {
            return Err(Error::Shape {
                expected: m.len(),
                got: v.len(),
            });
        }
        Ok(AdamState { cfg, m, v, t })
    }
}
