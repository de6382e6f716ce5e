//! Seed derivation. One master seed fans out into independent named streams so
//! that each stochastic component can be re-run on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Reparam = 4,
    Kmeans = 5,
    Split = 6,
    Synth = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// A sub-generator keyed by both a stream and an index (fold, restart, ...).
pub fn indexed_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | (index & 0xffff_ffff));
    rng
}
