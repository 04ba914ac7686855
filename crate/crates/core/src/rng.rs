//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream. Independent
//! streams are derived from a master seed by hashing: the substream seed for
//! `(seed, label, index)` is the first eight bytes (little endian) of
//! `SHA-256(seed as u64 LE || label bytes || 0x00 || index as u64 LE)`.
//! Labels in use: `"generation"`, `"init-noise"`, `"probes"`, `"dead-atom"`,
//! plus per-sample labels inside the generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn substream(seed: u64, label: &str, index: u64) -> Rng {
    seeded(derive_seed(seed, label, index))
}
