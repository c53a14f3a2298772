//! Seed derivation.
//!
//! Every stochastic stage gets its own stream derived from the run seed and
//! a stage label, so a run resumed from epoch `k` draws exactly the numbers
//! an uninterrupted run would have drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Mixes `seed` with a list of stream coordinates (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: &[u64]) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &s in stream {
        h = mix(h ^ mix(s.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    mix(h)
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, stream: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Stage labels used with [`derive_seed`].
pub mod stream {
    pub const OFFLINE: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const POLICY_INIT: u64 = 3;
    pub const CLASSIFIER_INIT: u64 = 4;
    pub const PRETRAIN_POLICY: u64 = 5;
    pub const PRETRAIN_CLASSIFIER: u64 = 6;
    pub const ROLLOUT: u64 = 7;
    pub const EPISODE: u64 = 8;
    pub const REFIT_POLICY: u64 = 9;
    pub const REFIT_CLASSIFIER: u64 = 10;
    pub const TEST: u64 = 11;
    pub const NOISE: u64 = 12;
    pub const EXTRA_OFFLINE: u64 = 13;
}
