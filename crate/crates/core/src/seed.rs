//! Derived random streams.
//!
//! Every random decision draws from its own generator seeded by
//! `(run seed, purpose, indices...)`, so results never depend on the order
//! in which workers pick up tasks, and resuming only needs the step counter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags of the derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Rollouts: `(step, batch position)`.
    Rollout = 1,
    /// Per-epoch shuffle of the training set: `(epoch)`.
    Shuffle = 2,
    /// Evaluation samples: `(item index)`.
    Eval = 3,
    /// Dataset generation: `()`.
    Data = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i));
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, indices))
}
