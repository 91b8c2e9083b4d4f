//! Seed derivation shared by every stochastic component.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based child seed: the same `(master, stream, index)` always maps to
/// the same seed, and adding new indices never changes existing ones.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub mod streams {
    pub const DEMAND: u64 = 1;
    pub const FLUCTUATION: u64 = 2;
    pub const TRAIN_EPISODE: u64 = 3;
    pub const EVAL_REPEAT: u64 = 4;
    pub const AGENT: u64 = 5;
    pub const PROBE: u64 = 6;
}
