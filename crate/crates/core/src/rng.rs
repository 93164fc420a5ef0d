//! Labeled random streams.
//!
//! Every random decision in an experiment is drawn from a ChaCha stream whose
//! seed is derived from the master seed and a label string. Labels in use:
//! `"init"` (target-model weights), `"data"` (dataset synthesis), `"split"`
//! (shuffles and auxiliary/evaluation partitioning), `"attack"` (inverter
//! initialization and batching, optimization restarts, hash bins) and
//! `"noise:<sample>:<epoch>"` (Gaussian defense noise for one sample visit).
//! Sub-streams nest: `derive_seed(derive_seed(master, "attack"), "hash")`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// Derives a child seed from a parent seed and a label.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn labeled_stream(parent: u64, label: &str) -> Stream {
    stream(derive_seed(parent, label))
}

/// Seed of the stream that perturbs sample `sample` during visit `epoch`.
pub fn noise_seed(parent: u64, sample: u64, epoch: u64) -> u64 {
    derive_seed(parent, &format!("noise:{sample}:{epoch}"))
}
