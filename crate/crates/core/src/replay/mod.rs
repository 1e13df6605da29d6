//! Prioritized replay and the append-only evaluative store.

mod store;
mod sum_tree;

pub use store::{read_jsonl, write_jsonl, EvalRecord, EvaluativeStore, SharedStore, STORE_SCHEMA, STORE_VERSION};
pub use sum_tree::SumTree;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Observation, N_ACTIONS};
use crate::error::{Error, Result};

/// Marker for "no human action" in [`Transition::a_human`].
pub const NO_HUMAN: i32 = -1;

/// One environment step with both the agent's and the human's action.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Observation,
    pub a_agent: usize,
    pub a_human: i32,
    pub r: f64,
    pub s_next: Observation,
    pub done: bool,
    pub intervened: bool,
    /// Human weight in effect when the transition was stored.
    pub lambda_h: f64,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        if self.a_agent >= N_ACTIONS {
            return Err(Error::RejectedTransition(format!("a_agent {} out of range", self.a_agent)));
        }
        if self.a_human != NO_HUMAN && !(0..N_ACTIONS as i32).contains(&self.a_human) {
            return Err(Error::RejectedTransition(format!("a_human {} out of range", self.a_human)));
        }
        if self.intervened != (self.a_human != NO_HUMAN) {
            return Err(Error::RejectedTransition(format!(
                "intervened={} inconsistent with a_human={}",
                self.intervened, self.a_human
            )));
        }
        if !self.r.is_finite() {
            return Err(Error::RejectedTransition(format!("non-finite reward {}", self.r)));
        }
        Ok(())
    }

    /// Action actually executed in the environment.
    pub fn executed(&self) -> usize {
        if self.intervened {
            self.a_human as usize
        } else {
            self.a_agent
        }
    }

    pub fn human(&self) -> Option<usize> {
        (self.a_human != NO_HUMAN).then_some(self.a_human as usize)
    }
}

pub trait ReplayItem: Clone {
    fn check(&self) -> Result<()> {
        Ok(())
    }

    /// Whether the optional intervention priority boost applies.
    fn boosted(&self) -> bool {
        false
    }
}

impl ReplayItem for Transition {
    fn check(&self) -> Result<()> {
        self.validate()
    }

    fn boosted(&self) -> bool {
        self.intervened
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerConfig {
    pub capacity: usize,
    /// Priority exponent.
    pub alpha: f64,
    /// Importance-sampling exponent.
    pub beta: f64,
    /// Added to |TD| so no transition has zero priority.
    pub eps: f64,
    /// Multiplier on the priority of intervened transitions (1 = off).
    pub intervention_boost: f64,
}

impl Default for PerConfig {
    fn default() -> Self {
        Self {
            capacity: 50_000,
            alpha: 0.9,
            beta: 0.4,
            eps: 1e-3,
            intervention_boost: 1.0,
        }
    }
}

impl PerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("replay.capacity must be > 0".into()));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Config("replay.alpha and replay.beta must be >= 0".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("replay.eps must be > 0".into()));
        }
        if !(self.intervention_boost > 0.0) {
            return Err(Error::Config("replay.intervention_boost must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Sample<I> {
    pub indices: Vec<usize>,
    pub items: Vec<I>,
    /// Sampling probability of each drawn slot.
    pub probabilities: Vec<f64>,
    /// Importance-sampling weights normalised so the batch maximum is 1.
    pub weights: Vec<f64>,
}

/// Proportional prioritized replay over a ring of slots. Slots filled via
/// [`PriorityBuffer::push_pinned`] are never evicted.
#[derive(Clone, Debug)]
pub struct PriorityBuffer<I> {
    cfg: PerConfig,
    tree: SumTree,
    items: Vec<I>,
    priorities: Vec<f64>,
    pinned: usize,
    next: usize,
    max_priority: f64,
}

impl<I: ReplayItem> PriorityBuffer<I> {
    pub fn new(cfg: PerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            tree: SumTree::new(cfg.capacity),
            items: Vec::with_capacity(cfg.capacity.min(1 << 16)),
            priorities: Vec::with_capacity(cfg.capacity.min(1 << 16)),
            cfg,
            pinned: 0,
            next: 0,
            max_priority: 0.0,
        })
    }

    pub fn config(&self) -> &PerConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn pinned(&self) -> usize {
        self.pinned
    }

    pub fn total(&self) -> f64 {
        self.tree.total()
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    /// Raw priority `p` of a slot (before the exponent).
    pub fn priority(&self, index: usize) -> Option<f64> {
        self.priorities.get(index).copied()
    }

    /// Tree leaf value `p^alpha` of a slot.
    pub fn leaf(&self, index: usize) -> f64 {
        self.tree.get(index)
    }

    pub fn get(&self, index: usize) -> Option<&I> {
        self.items.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &I> {
        self.items.iter()
    }

    fn set_priority(&mut self, index: usize, p: f64) {
        self.priorities[index] = p;
        self.tree.set(index, p.powf(self.cfg.alpha));
        if p > self.max_priority {
            self.max_priority = p;
        }
    }

    fn boost(&self, item: &I) -> f64 {
        if item.boosted() {
            self.cfg.intervention_boost
        } else {
            1.0
        }
    }

    /// Insert at `max(current max priority, initial_priority)`, evicting the
    /// oldest unpinned slot when full. Returns the slot index.
    pub fn push(&mut self, item: I, initial_priority: f64) -> Result<usize> {
        item.check()?;
        if !(initial_priority > 0.0) || !initial_priority.is_finite() {
            return Err(Error::RejectedTransition(format!(
                "initial priority must be positive, got {initial_priority}"
            )));
        }
        if self.pinned >= self.cfg.capacity {
            return Err(Error::RejectedTransition("buffer is fully pinned".into()));
        }
        let p = self.max_priority.max(initial_priority) * self.boost(&item);
        let index = if self.items.len() < self.cfg.capacity {
            self.items.push(item);
            self.priorities.push(0.0);
            self.items.len() - 1
        } else {
            let i = self.pinned + self.next;
            self.next = (self.next + 1) % (self.cfg.capacity - self.pinned);
            self.items[i] = item;
            i
        };
        self.set_priority(index, p);
        Ok(index)
    }

    /// Insert a slot that is never evicted. Must precede all regular pushes.
    pub fn push_pinned(&mut self, item: I, initial_priority: f64) -> Result<usize> {
        if self.items.len() != self.pinned {
            return Err(Error::InternalFault("pinned items must be pushed before regular ones".into()));
        }
        let index = self.push(item, initial_priority)?;
        self.pinned += 1;
        Ok(index)
    }

    /// Stratified proportional draw of `batch_size` slots.
    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<Sample<I>> {
        if self.len() < batch_size || batch_size == 0 {
            return Err(Error::NotReady {
                size: self.len(),
                needed: batch_size.max(1),
            });
        }
        let total = self.tree.total();
        let segment = total / batch_size as f64;
        let n = self.len() as f64;
        let mut indices = Vec::with_capacity(batch_size);
        let mut items = Vec::with_capacity(batch_size);
        let mut probabilities = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        for k in 0..batch_size {
            let u: f64 = rng.gen();
            let mass = ((k as f64 + u) * segment).min(total);
            let mut i = self.tree.find(mass);
            if i >= self.len() {
                i = self.len() - 1;
            }
            let p = self.tree.get(i) / total;
            indices.push(i);
            items.push(self.items[i].clone());
            probabilities.push(p);
            weights.push((n * p).powf(-self.cfg.beta));
        }
        let max_w = weights.iter().copied().fold(f64::MIN, f64::max);
        for w in &mut weights {
            *w /= max_w;
        }
        Ok(Sample {
            indices,
            items,
            probabilities,
            weights,
        })
    }

    /// Set each slot's priority to `|td| + eps` (times the boost, if any).
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        if indices.len() != td_errors.len() {
            return Err(Error::Shape {
                expected: indices.len(),
                got: td_errors.len(),
            });
        }
        for (&i, &td) in indices.iter().zip(td_errors) {
            if i >= self.len() {
                return Err(Error::InternalFault(format!("priority update for empty slot {i}")));
            }
            if !td.is_finite() {
                return Err(Error::InternalFault(format!("non-finite TD error {td} for slot {i}")));
            }
            let p = (td.abs() + self.cfg.eps) * self.boost(&self.items[i]);
            self.set_priority(i, p);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone, Debug, PartialEq)]
    struct Tag(u32);
    impl ReplayItem for Tag {}

    fn cfg(capacity: usize, alpha: f64) -> PerConfig {
        PerConfig {
            capacity,
            alpha,
            ..PerConfig::default()
        }
    }

    #[test]
    fn push_into_empty() {
        let mut b = PriorityBuffer::new(cfg(8, 0.9)).unwrap();
        b.push(Tag(0), 2.0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.total(), b.leaf(0));
        assert_eq!(b.priority(0), Some(2.0));
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = PriorityBuffer::new(cfg(4, 1.0)).unwrap();
        for k in 0..5 {
            b.push(Tag(k), 1.0).unwrap();
        }
        assert_eq!(b.len(), 4);
        let tags: Vec<u32> = b.iter().map(|t| t.0).collect();
        assert_eq!(tags, vec![4, 1, 2, 3]);
    }

    #[test]
    fn pinned_slots_survive() {
        let mut b = PriorityBuffer::new(cfg(4, 1.0)).unwrap();
        b.push_pinned(Tag(100), 1.0).unwrap();
        b.push_pinned(Tag(101), 1.0).unwrap();
        for k in 0..7 {
            b.push(Tag(k), 1.0).unwrap();
        }
        let tags: Vec<u32> = b.iter().map(|t| t.0).collect();
        assert_eq!(&tags[..2], &[100, 101]);
        assert_eq!(b.len(), 4);
        assert!(b.push_pinned(Tag(102), 1.0).is_err());
    }

    #[test]
    fn new_items_enter_at_max_priority() {
        let mut b = PriorityBuffer::new(cfg(8, 1.0)).unwrap();
        b.push(Tag(0), 1.0).unwrap();
        b.update_priorities(&[0], &[5.0]).unwrap();
        let i = b.push(Tag(1), 1.0).unwrap();
        assert_eq!(b.priority(i), Some(5.0 + 1e-3));
    }

    #[test]
    fn priority_floor_and_abs() {
        let mut b = PriorityBuffer::new(cfg(8, 0.9)).unwrap();
        b.push(Tag(0), 1.0).unwrap();
        b.push(Tag(1), 1.0).unwrap();
        b.update_priorities(&[0, 1], &[0.0, -2.0]).unwrap();
        assert_eq!(b.priority(0), Some(1e-3));
        assert_eq!(b.priority(1), Some(2.0 + 1e-3));
        assert!(matches!(b.update_priorities(&[7], &[1.0]), Err(Error::InternalFault(_))));
    }

    #[test]
    fn equal_priorities_give_unit_weights() {
        let mut b = PriorityBuffer::new(cfg(64, 0.9)).unwrap();
        for k in 0..40 {
            b.push(Tag(k), 1.0).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = b.sample(32, &mut rng).unwrap();
        assert!(s.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn single_element() {
        let mut b = PriorityBuffer::new(cfg(4, 0.9)).unwrap();
        b.push(Tag(9), 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = b.sample(1, &mut rng).unwrap();
        assert_eq!(s.items, vec![Tag(9)]);
        assert_eq!(s.weights, vec![1.0]);
        assert!(matches!(b.sample(2, &mut rng), Err(Error::NotReady { size: 1, needed: 2 })));
    }

    #[test]
    fn rejects_inconsistent_transition() {
        let obs = Observation([0.0; crate::env::OBS_DIM]);
        let t = Transition {
            s: obs,
            a_agent: 3,
            a_human: NO_HUMAN,
            r: 0.0,
            s_next: obs,
            done: false,
            intervened: true,
            lambda_h: 0.0,
        };
        let mut b = PriorityBuffer::new(cfg(4, 0.9)).unwrap();
        assert!(matches!(b.push(t, 1.0), Err(Error::RejectedTransition(_))));
        let t = Transition { a_agent: 40, intervened: false, ..t };
        assert!(b.push(t, 1.0).is_err());
    }

    #[test]
    fn intervention_boost_scales_priority() {
        let obs = Observation([0.0; crate::env::OBS_DIM]);
        let t = Transition {
            s: obs,
            a_agent: 3,
            a_human: 5,
            r: 0.0,
            s_next: obs,
            done: false,
            intervened: true,
            lambda_h: 1.0,
        };
        let mut b = PriorityBuffer::new(PerConfig {
            capacity: 4,
            intervention_boost: 2.0,
            ..PerConfig::default()
        })
        .unwrap();
        b.push(t, 1.0).unwrap();
        b.update_priorities(&[0], &[1.0]).unwrap();
        assert!((b.priority(0).unwrap() - 2.002).abs() < 1e-12);
    }
}
