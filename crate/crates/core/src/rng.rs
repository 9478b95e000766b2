//! Named random streams derived from a single master seed.
//!
//! Every consumer of randomness asks for a stream by purpose and index, so
//! adding a new consumer never shifts the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

fn digest(master: u64, purpose: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"belief-stream/v1");
    hasher.update(master.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

/// RNG for `(master, purpose, index)`.
pub fn stream(master: u64, purpose: &str, index: u64) -> StreamRng {
    ChaCha8Rng::from_seed(digest(master, purpose, index))
}

/// A derived 64-bit seed, for components that persist their seed.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    let d = digest(master, purpose, index);
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}
