//! Named substreams derived from a single master seed.
//!
//! Every random decision in the engine draws from a stream keyed by
//! (master seed, name parts), so any component can be replayed in
//! isolation regardless of execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic RNG for the substream identified by `parts`.
pub fn substream(master: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for part in parts {
        hasher.update([0x1f]); // separator so ["ab","c"] != ["a","bc"]
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}
