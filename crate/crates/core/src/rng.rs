//! Deterministic stream handling.
//!
//! All randomness flows from a single 64-bit seed. Each chain (or replica)
//! owns a counter-based substream selected by its id, so replicas are
//! reproducible and independent without coordination.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Substream for a given (seed, chain id) pair.
pub fn chain_stream(seed: u64, chain_id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_id);
    rng
}
