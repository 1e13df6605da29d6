/// Binary sum tree over a power-of-two number of leaves.
///
/// Internal nodes are recomputed from their children on every update, so
/// the root never accumulates drift from incremental deltas.
#[derive(Clone, Debug)]
pub struct SumTree {
    leaves: usize,
    tree: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            tree: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.tree[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.tree[self.leaves + leaf]
    }

    pub fn set(&mut self, leaf: usize, value: f64) {
        let mut node = self.leaves + leaf;
        self.tree[node] = value;
        while node > 1 {
            node /= 2;
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass`. Zero-valued subtrees
    /// are never entered while a positive sibling exists.
    pub fn find(&self, mass: f64) -> usize {
        let mut u = mass.max(0.0);
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            let right = left + 1;
            if u < self.tree[left] || self.tree[right] <= 0.0 {
                node = left;
            } else {
                u -= self.tree[left];
                node = right;
            }
        }
        node - self.leaves
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn find_walks_cumulative_mass() {
        let mut t = SumTree::new(5);
        for (i, v) in [1.0, 0.0, 2.0, 3.0, 4.0].iter().enumerate() {
            t.set(i, *v);
        }
        assert_eq!(t.total(), 10.0);
        assert_eq!(t.find(0.0), 0);
        assert_eq!(t.find(0.99), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.99), 2);
        assert_eq!(t.find(3.0), 3);
        assert_eq!(t.find(6.0), 4);
        // overshoot lands on the last positive leaf
        assert_eq!(t.find(11.0), 4);
    }
}
