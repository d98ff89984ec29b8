//! Seed derivation.
//!
//! Every entity in an experiment draws from its own generator whose seed is
//! `SHA-256(master_be64 || role_utf8 || index_be64)` truncated to the first
//! eight bytes (big-endian). Roles are short ASCII tags such as `"household"`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, role: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_be_bytes());
    hasher.update(role.as_bytes());
    hasher.update(index.to_be_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
