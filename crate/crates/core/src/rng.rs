//! Labeled deterministic RNG streams.
//!
//! Every source of randomness (subsampling, initialization, fold splits,
//! synthesis, dropout, ...) draws from its own stream derived from the master
//! seed and a fixed label, so enabling or reordering one consumer never
//! shifts the draws seen by another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// RNG stream for `label` under `master`.
pub fn stream(master: u64, label: &str) -> ChaCha8Rng {
    substream(master, label, 0)
}

/// Indexed RNG stream, e.g. one per fold or per patient.
pub fn substream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&fnv1a64(label.as_bytes()).to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    seed[24..32].copy_from_slice(&0x68696d74u64.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Stable 64-bit content hash, used for config snapshots.
pub fn content_hash(text: &str) -> u64 {
    fnv1a64(text.as_bytes())
}
