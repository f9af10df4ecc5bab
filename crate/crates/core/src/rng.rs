//! Counter-based random streams: one independent ChaCha stream per path index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for path `index` under run `seed`. Streams never overlap, so the
/// result of a path does not depend on scheduling.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derive a sub-seed for a named purpose, so that unrelated consumers of one
/// run seed draw from unrelated streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
