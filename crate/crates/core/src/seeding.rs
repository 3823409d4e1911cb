//! Reproducible random streams.
//!
//! Every task draws from its own ChaCha stream whose seed is a stable hash of
//! the master seed and a task path such as `"free-energy/seed/3/disorder"`.
//! Seeds never depend on scheduling order, so results are independent of the
//! number of workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Random number generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Seed for the task identified by `path` under `master`.
pub fn derive_seed(master: u64, path: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(path.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Stream for `path` under `master`.
pub fn task_rng(master: u64, path: &str) -> SimRng {
    rng_from_seed(derive_seed(master, path))
}
