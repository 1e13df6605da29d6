//! Versioned binary checkpoints.
//!
//! Layout: magic, format version, float width, learner kind, environment
//! step, then the learner payload. Every payload starts with the greedy
//! network, so evaluation can load any checkpoint kind.

use std::path::Path;

use crate::approximator::{DuelingNet, Reader, Writer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"IDDQNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub kind: String,
    pub step: u64,
    pub width: u8,
    pub payload: Vec<u8>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(kind: &str, step: u64, payload: Vec<u8>) -> Self {
        Self {
            kind: kind.to_string(),
            step,
            width: T::WIDTH,
            payload,
        }
    }

    /// Checkpoint holding a single policy network.
    pub fn from_net<T: Scalar>(kind: &str, step: u64, net: &DuelingNet<T>) -> Self {
        let mut w = Writer::new();
        w.dueling(net);
        Self::new::<T>(kind, step, w.buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u8(self.width);
        w.u32(self.kind.len() as u32);
        w.bytes(self.kind.as_bytes());
        w.u64(self.step);
        w.u64(self.payload.len() as u64);
        w.bytes(&self.payload);
        w.buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Config("not a checkpoint file".into()));
        }
        let v = r.u32()?;
        if v != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("checkpoint version {v} unsupported (expected {CHECKPOINT_VERSION})")));
        }
        let width = r.u8()?;
        let n = r.u32()? as usize;
        let kind = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::Config(format!("bad checkpoint kind: {e}")))?;
        let step = r.u64()?;
        let len = r.u64()? as usize;
        let payload = r.take(len)?.to_vec();
        if !r.is_done() {
            return Err(Error::Config("trailing bytes after checkpoint payload".into()));
        }
        Ok(Self {
            kind,
            step,
            width,
            payload,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::storage(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::storage(path, e))?;
        Self::from_bytes(&buf).map_err(|e| Error::storage(path, e))
    }

    fn check_width<T: Scalar>(&self) -> Result<()> {
        if self.width != T::WIDTH {
            return Err(Error::Config(format!(
                "checkpoint stores {}-byte floats, expected {}",
                self.width,
                T::WIDTH
            )));
        }
        Ok(())
    }

    /// The greedy network at the head of the payload.
    pub fn policy_net<T: Scalar>(&self) -> Result<DuelingNet<T>> {
        self.check_width::<T>()?;
        Reader::new(&self.payload).dueling()
    }

    pub fn reader<T: Scalar>(&self) -> Result<Reader<'_>> {
        self.check_width::<T>()?;
        Ok(Reader::new(&self.payload))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_stable_round_trip() {
        let net = DuelingNet::<f32>::standard(3);
        let c = Checkpoint::from_net("bc", 42, &net);
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.policy_net::<f32>().unwrap(), net);
        assert!(back.policy_net::<f64>().is_err());
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Checkpoint::from_bytes(b"nonsense").is_err());
        let bytes = Checkpoint::from_net("bc", 1, &DuelingNet::<f32>::standard(0)).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
