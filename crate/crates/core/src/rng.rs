//! Named seed derivation.
//!
//! Every random stream in the crate is obtained from a single run seed by
//! mixing in a label: `derive(seed, "augment")`, `derive(seed, "case-7")`.
//! Streams with different labels are independent for practical purposes and
//! each one is reproducible on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// `seed ⊕ H(label)`, where `H` is the first eight bytes of SHA-256.
pub fn derive(seed: u64, label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(head)
}

/// A ChaCha8 stream for `derive(seed, label)`.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, label))
}
