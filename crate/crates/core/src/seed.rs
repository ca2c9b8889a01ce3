//! Seed derivation.
//!
//! One top-level seed feeds every random component through labeled hashing,
//! and per-(device, round) streams are keyed rather than drawn in sequence so
//! that the evaluation order never changes a draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a sub-seed for a named component ("topology", "channel", ...).
pub fn derive(root: u64, label: &str) -> u64 {
    // FNV-1a over the label, then fold in the root.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(root ^ mix64(h))
}

/// Folds a sequence of integer keys into a seed.
pub fn keyed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(seed), |acc, &k| mix64(acc ^ mix64(k)))
}

/// A ChaCha stream keyed by `(seed, keys...)`.
pub fn keyed_rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(keyed(seed, keys))
}
