//! Deterministic randomness.
//!
//! Every random quantity in the crate flows from a single `u64` seed.
//! Independent streams (sweep cells, chains, data generation) are derived by
//! counter-based splitting: `split(seed, stream)` mixes the pair through
//! SplitMix64, so cells are decorrelated yet reproducible in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The RNG used everywhere. ChaCha has a stable, portable stream.
pub type Rng = ChaCha12Rng;

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed of sub-stream `stream` from a root seed.
pub fn split(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0xa076_1d64_78bd_642f)))
}

/// RNG for a root seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// RNG for sub-stream `stream` of a root seed.
pub fn rng_for_stream(seed: u64, stream: u64) -> Rng {
    rng_from_seed(split(seed, stream))
}
