//! Seed derivation so every stochastic stage owns an independent stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Hashes a base seed together with a domain tag and extra key material.
pub fn derive_seed(seed: u64, tag: &str, key: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    h.update(key);
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest is 32 bytes"))
}

pub fn rng_for(seed: u64, tag: &str, key: &[u8]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag, key))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
