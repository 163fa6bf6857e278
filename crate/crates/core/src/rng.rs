//! Seeded random streams.
//!
//! Every random draw in the pipeline comes from a ChaCha8 stream whose
//! 256-bit key is `SHA-256(master_seed_le || purpose_tag || index_le)`.
//! Streams are therefore reproducible across platforms and independent
//! of the order in which they are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type RngStream = ChaCha8Rng;

/// Derives the stream for `(master_seed, purpose, index)`.
pub fn stream(master_seed: u64, purpose: &str, index: u64) -> RngStream {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Fisher-Yates shuffle driven by 64-bit draws.
pub fn shuffle<T>(items: &mut [T], rng: &mut RngStream) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i as u64) as usize;
        items.swap(i, j);
    }
}

/// A permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, rng);
    idx
}

/// Uniform draw in `[lo, hi)`; always consumes exactly one `f64`.
pub fn uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    use rand::Rng;
    let u: f64 = rng.random();
    lo + u * (hi - lo)
}
