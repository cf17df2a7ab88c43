//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha8 stream derived from a base seed
//! and a path of labels/indices, so results never depend on iteration or
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a label (FNV-1a).
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Mixes a base seed with a sequence of keys into a new seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Seed for a named sub-stream, e.g. `stream_seed(run_seed, "dpo")`.
pub fn stream_seed(seed: u64, label: &str) -> u64 {
    derive_seed(seed, &[label_hash(label)])
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for item `index` of the stream identified by `seed`.
pub fn indexed_rng(seed: u64, index: u64) -> Rng {
    rng_from_seed(derive_seed(seed, &[index]))
}
