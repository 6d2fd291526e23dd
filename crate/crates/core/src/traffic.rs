//! Per-STA packet queues as reported through BSRs.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferState {
    packets: Vec<u64>,
    capacity: Option<u64>,
}

impl BufferState {
    pub fn new(packets: Vec<u64>, capacity: Option<u64>) -> Self {
        let packets = match capacity {
            Some(c) => packets.into_iter().map(|b| b.min(c)).collect(),
            None => packets,
        };
        BufferState { packets, capacity }
    }

    pub fn empty(stations: usize, capacity: Option<u64>) -> Self {
        BufferState::new(vec![0; stations], capacity)
    }

    pub fn packets(&self) -> &[u64] {
        &self.packets
    }

    pub fn capacity(&self) -> Option<u64> {
        self.capacity
    }

    pub fn total(&self) -> u64 {
        self.packets.iter().sum()
    }

    pub fn all_empty(&self) -> bool {
        self.packets.iter().all(|&b| b == 0)
    }

    /// Adds Poisson(`rate * dt`) packets per STA, clipped at capacity.
    /// Returns the number of packets actually enqueued.
    pub fn arrivals<R: Rng + ?Sized>(&mut self, rate_per_s: f64, dt: f64, rng: &mut R) -> u64 {
        let mean = rate_per_s * dt;
        if mean.is_nan() || mean <= 0.0 {
            return 0;
        }
        let dist = Poisson::new(mean).expect("positive finite mean");
        let mut added = 0;
        for b in self.packets.iter_mut() {
            let n = dist.sample(rng) as u64;
            let next = match self.capacity {
                Some(c) => (*b + n).min(c),
                None => *b + n,
            };
            added += next - *b;
            *b = next;
        }
        added
    }

    /// Removes transmitted packets; `p > b` for any STA is a scheduler bug.
    pub fn depart(&mut self, packets: &[u64]) -> Result<()> {
        if packets.len() != self.packets.len() {
            return Err(Error::ContractViolation(format!(
                "packet vector has {} entries for {} stations",
                packets.len(),
                self.packets.len()
            )));
        }
        if let Some(k) = packets.iter().zip(&self.packets).position(|(p, b)| p > b) {
            return Err(Error::ContractViolation(format!(
                "station {k} sends {} packets with {} buffered",
                packets[k], self.packets[k]
            )));
        }
        for (b, p) in self.packets.iter_mut().zip(packets) {
            *b -= p;
        }
        Ok(())
    }
}
