//! Named random stream derivation.
//!
//! All randomness in the crate flows from a single 64-bit seed. Independent
//! stages derive their own stream by name, so adding a stage never perturbs
//! the draws of existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a over the label bytes, folded into the seed with splitmix64.
fn mix(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic RNG for the stream identified by `label`.
pub fn stream(seed: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix(seed, label))
}

/// Stream for one grid point / trial of a named stage.
pub fn indexed_stream(seed: u64, label: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derived_seed(seed, label, index))
}

/// Child seed for one grid point / trial of a named stage.
pub fn derived_seed(seed: u64, label: &str, index: u64) -> u64 {
    mix(mix(seed, label), &index.to_string())
}
