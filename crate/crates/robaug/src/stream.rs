//! Seeded randomness with reproducible per-frame streams.
//!
//! Every frame gets its own RNG derived from (seed, episode id, frame
//! index), so results never depend on batch size, worker count, or the
//! order frames happen to be processed in.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// RNG stream for one frame of one episode.
pub fn frame_stream(seed: u64, episode_id: &str, frame_index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"robaug.stream.v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((episode_id.len() as u64).to_le_bytes());
    hasher.update(episode_id.as_bytes());
    hasher.update(frame_index.to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Single u64 derived from a domain tag and a list of byte fields.
/// Fields are length-prefixed, so ("ab","c") and ("a","bc") differ.
pub fn derive_u64(domain: &str, parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest: [u8; 32] = hasher.finalize().into();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
