//! Reproducible random streams.
//!
//! Every random draw in the crate comes from ChaCha20 (20 rounds, the
//! `rand_chacha` implementation) keyed by a 64-bit seed through
//! `SeedableRng::seed_from_u64`. Independent tasks (restart `i`, sample chunk
//! `i`) use stream id `i` of the same key via `set_stream`, so results do not
//! depend on how tasks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

/// Generator for task `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fold arbitrary byte strings into a 64-bit seed (first 8 bytes of SHA-256).
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}
