//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded through
//! [`derive_seed`], so results only depend on the base seed and the stream
//! label, never on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer (Steele, Lea & Flood constants).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(base ^ splitmix64(stream))`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

pub fn rng(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

/// Named stream labels.
pub mod stream {
    pub const GROUND_TRUTH: u64 = 1;
    pub const STATES: u64 = 2;
    pub const BASES: u64 = 3;
    pub const THETA_INIT: u64 = 4;
    pub const PHI_INIT: u64 = 5;
    pub const TEST_STATES: u64 = 6;
    pub const LANDSCAPE: u64 = 7;
    pub const TRIAL: u64 = 8;
    /// Shot sampling for (state, timestamp) pair `p` uses `SHOTS + p`.
    pub const SHOTS: u64 = 1 << 32;
}
