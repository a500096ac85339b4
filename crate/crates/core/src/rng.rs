//! Seed splitting.
//!
//! Every random stream is derived from a master seed and a path of labels:
//! `derive(seed, &[a, b, c])` folds each label into the state with the
//! SplitMix64 finalizer, so a stream depends only on its label path and
//! never on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream labels used across the crate.
pub mod label {
    pub const DATASET: u64 = 0x4441_5441;
    pub const INIT: u64 = 0x494e_4954;
    pub const COLLECT: u64 = 0x434f_4c4c;
    pub const MINIBATCH: u64 = 0x4d49_4e49;
    pub const META: u64 = 0x4d45_5441;
    pub const TASK: u64 = 0x5441_534b;
    pub const ADAPT: u64 = 0x4144_4150;
    pub const SPLIT: u64 = 0x5350_4c54;
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix(seed), |acc, &l| splitmix(acc ^ splitmix(l)))
}

pub fn stream(seed: u64, labels: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive(seed, labels))
}
