//! Seeded, platform-independent random streams.
//!
//! ChaCha20 is a counter-based generator: each `(seed, stream)` pair names an
//! independent sequence, so e.g. epoch `k`'s shuffle never depends on how many
//! draws earlier epochs consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stream identifiers for the different consumers of randomness.
pub mod streams {
    pub const DATA_CENTERS: u64 = 1;
    pub const DATA_NOISE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const PROTOCOL: u64 = 4;
    pub const IDENTIFICATION: u64 = 5;
    pub const CENTER_INIT: u64 = 6;
    pub const TRIPLET_BATCHES: u64 = 7;
    /// Epoch shuffles use `SHUFFLE_BASE + epoch`.
    pub const SHUFFLE_BASE: u64 = 1 << 32;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
