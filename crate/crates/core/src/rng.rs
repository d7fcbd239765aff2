//! Seeded random streams.
//!
//! Every run derives all of its randomness from one `u64` seed through
//! ChaCha8 (`rand_chacha`), using the cipher's 64-bit stream id to split
//! the seed into independent, named streams. Stream ids are part of the
//! reproducibility contract and must not be renumbered.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Initial model parameters.
pub const STREAM_INIT: u64 = 0;
/// Synthetic data generation.
pub const STREAM_DATA: u64 = 1;
/// Dataset shuffling and partitioning.
pub const STREAM_PARTITION: u64 = 2;
/// Ad hoc streams used by verification routines.
pub const STREAM_VERIFY: u64 = 3;
/// Worker `q` (0-based) samples its minibatches from stream `STREAM_WORKER_BASE + q`.
pub const STREAM_WORKER_BASE: u64 = 1 << 32;

pub fn stream(seed: u64, stream_id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn worker_stream(seed: u64, worker: usize) -> SimRng {
    stream(seed, STREAM_WORKER_BASE + worker as u64)
}
