//! Seeding and shuffling.
//!
//! Every random stream in the crate is a ChaCha8 generator. Child seeds are
//! derived from a parent seed and a label by taking the first eight bytes
//! (little-endian) of `SHA-256("{parent}/{label}")`, so stages and branches
//! can be re-run in isolation and still draw the same numbers.
//!
//! Shuffling is a Fisher-Yates pass from the back of the slice. The swap
//! index for position `i` is `(next_u64() * (i + 1)) >> 64`, computed in
//! 128-bit arithmetic.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{parent}/{label}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Uniform index in `0..bound` by multiply-shift.
pub fn below(rng: &mut impl RngCore, bound: usize) -> usize {
    debug_assert!(bound > 0);
    ((rng.next_u64() as u128 * bound as u128) >> 64) as usize
}

pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// Uniform real in `[0, 1)` with 53 bits of precision.
pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}
