//! Seed derivation for reproducible, independently derivable rng streams.
//!
//! Every run derives its stream from `(root seed, label, index)` so that
//! parallel workers and resumed runs draw identical sequences regardless of
//! scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels keep rng draws for unrelated purposes from colliding.
pub mod stream {
    pub const SHARED_TRAIN: u64 = 1;
    pub const SEARCH_ITER: u64 = 2;
    pub const POLICY_SAMPLE: u64 = 3;
    pub const DATA_SPLIT: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const MODEL_INIT: u64 = 6;
    pub const PROXY_RUN: u64 = 7;
    pub const SCHEDULE_RUN: u64 = 8;
    pub const APPLY: u64 = 9;
}

/// SplitMix64 finalizer; decorrelates nearby (seed, label, index) triples.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a root seed, a stream label, and a run index.
pub fn derive_seed(seed: u64, label: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(label)) ^ index)
}

/// Deterministic rng for the given (seed, label, index) triple.
pub fn derive_rng(seed: u64, label: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label, index))
}
