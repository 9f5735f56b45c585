//! Deterministic RNG substreams.
//!
//! Every randomized component draws from a ChaCha stream selected by a
//! `(seed, key...)` tuple, so results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Stable 64-bit FNV-1a hash of a string key.
pub fn key_hash(key: &str) -> u64 {
    key.bytes().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Root stream for a seed.
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent substream of `seed` identified by an ordered list of keys.
pub fn substream(seed: u64, keys: &[u64]) -> Rng {
    let stream = keys.iter().fold(0x5851_f42d_4c95_7f2d_u64, |acc, &k| mix(acc ^ mix(k)));
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
