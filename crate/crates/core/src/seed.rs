//! Seed expansion.
//!
//! Every random decision in a run descends from one top-level `u64` seed. A stage
//! seed is the first eight bytes (little-endian) of `SHA-256(seed_le || label)`,
//! where `label` is a short ASCII tag such as `"split"` or `"train/epoch/3"`.
//! Generators are ChaCha8 streams seeded from the stage seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic child seed for a named stage.
pub fn stage_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// The crate's reproducible RNG.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for a named stage of a seeded run.
pub fn stage_rng(seed: u64, label: &str) -> ChaCha8Rng {
    rng(stage_seed(seed, label))
}
