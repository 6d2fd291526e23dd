use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub csi: Vec<f64>,
    pub buf: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_csi: Vec<f64>,
    pub next_buf: Vec<f64>,
    /// Actions available in the next state; the bootstrap max runs over these.
    pub next_mask: Vec<bool>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO experience memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// `batch_size` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch_size)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn t(action: usize) -> Transition {
        Transition {
            csi: vec![action as f64],
            buf: vec![],
            action,
            reward: 0.0,
            next_csi: vec![],
            next_buf: vec![],
            next_mask: vec![],
            terminal: true,
        }
    }

    #[test]
    fn empty_buffer_errors() {
        let b = ReplayBuffer::new(4);
        assert!(matches!(
            b.sample(1, &mut seeded(0)),
            Err(Error::EmptyBuffer)
        ));
    }

    #[test]
    fn single_item_is_returned() {
        let mut b = ReplayBuffer::new(4);
        b.push(t(7));
        let s = b.sample(1, &mut seeded(0)).unwrap();
        assert_eq!(s[0], &t(7));
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..4 {
            b.push(t(i));
        }
        assert_eq!(b.len(), 3);
        let actions: Vec<usize> = (0..3).map(|i| b.get(i).unwrap().action).collect();
        assert_eq!(actions, vec![1, 2, 3]);
    }

    #[test]
    fn sampling_is_uniform() {
        let n = 10;
        let mut b = ReplayBuffer::new(n);
        for i in 0..n {
            b.push(t(i));
        }
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        for tr in b.sample(draws, &mut seeded(12)).unwrap() {
            counts[tr.action] += 1;
        }
        let e = draws as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 9 dof, p = 0.001 critical value
        assert!(chi2 < 27.88, "chi2 {chi2}");
        let sd = (e * (1.0 - 1.0 / n as f64)).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - e).abs() < 4.0 * sd));
    }

    #[test]
    fn sampling_is_deterministic_per_rng() {
        let mut b = ReplayBuffer::new(8);
        for i in 0..8 {
            b.push(t(i));
        }
        let a: Vec<usize> = b
            .sample(16, &mut seeded(4))
            .unwrap()
            .iter()
            .map(|t| t.action)
            .collect();
        let c: Vec<usize> = b
            .sample(16, &mut seeded(4))
            .unwrap()
            .iter()
            .map(|t| t.action)
            .collect();
        assert_eq!(a, c);
    }
}
