//! Counter-based random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! run seed and a fixed stream id, so adding draws in one module never shifts
//! the sequence seen by another and parallel workers can be replayed exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const MARKOV: u64 = 1;
pub const PLANT: u64 = 2;
pub const SENSOR: u64 = 3;
pub const VERIFIER: u64 = 4;
pub const LATENCY: u64 = 5;
pub const ATTACK: u64 = 6;
pub const KEYS: u64 = 7;
pub const MONTE_CARLO: u64 = 8;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for sub-stream `index` of `stream`, used when a check fans out
/// over independent workers. The seed is mixed so that `(stream, index)`
/// pairs never collide with the plain streams above.
pub fn substream(seed: u64, stream: u64, index: u64) -> StreamRng {
    let mixed = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(stream | (1 << 63));
    rng
}
