//! Seed handling. Every random stream in the simulator is a ChaCha8 stream
//! derived from the experiment seed, so runs are reproducible bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-client training stream: experiment seed xor domain id.
pub fn client_seed(experiment_seed: u64, domain_id: u32) -> u64 {
    experiment_seed ^ u64::from(domain_id)
}

/// Mixes a seed with a purpose tag (splitmix64 finalizer) so that streams
/// used for different purposes never coincide.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
