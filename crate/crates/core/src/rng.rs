//! Seed derivation.
//!
//! All randomness flows from a master seed through a counter-based scheme:
//! `derive(seed, stream, index)` feeds the three words through SplitMix64
//! finalisers, and the result seeds a `ChaCha8Rng`. A job identified by
//! `(stream, index)` therefore draws the same numbers no matter which thread
//! runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, one per consumer of randomness.
pub mod stream {
    pub const FOLDS: u64 = 0x01;
    pub const INIT: u64 = 0x02;
    pub const SHUFFLE: u64 = 0x03;
    pub const DROPOUT: u64 = 0x04;
    pub const PERMUTATION: u64 = 0x05;
    pub const PHONESTHEME: u64 = 0x06;
    pub const SPEARMAN: u64 = 0x07;
    pub const HYPEROPT: u64 = 0x08;
    pub const SYNTH: u64 = 0x09;
    pub const RUN: u64 = 0x0a;
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `(seed, stream, index)`.
pub fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream.rotate_left(17)) ^ index.rotate_left(41))
}

/// A ChaCha8 generator keyed by `(seed, stream, index)`.
pub fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, index))
}

/// FNV-1a over a sequence of integers; stable across platforms and releases.
pub fn fnv1a<I: IntoIterator<Item = u64>>(items: I) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for item in items {
        for b in item.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}
