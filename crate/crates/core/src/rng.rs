//! Named seed derivation.
//!
//! Every random stream is derived from one top-level seed and a path such as
//! `"search/attempt"` plus an integer index, so attempts and trials can be
//! evaluated in any order (or in parallel) and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `(seed, path, index)`.
pub fn derive_seed(seed: u64, path: &str, index: u64) -> u64 {
    // FNV-1a over the path, then mix with the seed and index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in path.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(seed ^ h).wrapping_add(splitmix64(index)))
}

/// A ChaCha8 stream for `(seed, path, index)`.
pub fn stream(seed: u64, path: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path, index))
}
