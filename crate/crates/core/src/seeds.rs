//! Named random streams.
//!
//! All randomness derives from integer seeds through ChaCha8, a counter-based
//! generator. A label selects the stream, so independent consumers of one
//! seed (lesion pattern, noise, initialisation, sampling) never share draws.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn label_stream(label: &str) -> u64 {
    let h = Sha256::digest(label.as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("digest has 32 bytes"))
}

/// Generator for `(seed, label)`.
pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_stream(label));
    rng
}

/// Integer seed for a named sub-experiment.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    rng_for(seed, label).next_u64()
}
