//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! the master seed, so changing how one component uses randomness does not
//! perturb the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream identifiers within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Placement = 1,
    Channel = 2,
    Traffic = 3,
    Agent = 4,
    Replay = 5,
    Init = 6,
}

/// Stream `stream` of replication `replication` under `seed`.
pub fn stream(seed: u64, replication: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ replication.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream as u64);
    rng
}

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
