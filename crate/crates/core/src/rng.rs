//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! run seed, a stream tag and an index, so changing how much one consumer
//! draws never shifts the numbers another consumer sees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type RunRng = ChaCha8Rng;

/// Stream tags used by the training and sampling loops.
pub mod stream {
    pub const SCHEDULE: u64 = 1;
    pub const BODY: u64 = 2;
    pub const REGION: u64 = 3;
    pub const SDS: u64 = 4;
    pub const REAL: u64 = 5;
    pub const INIT: u64 = 6;
    pub const FIXED_LATENT: u64 = 7;
    pub const SAMPLE: u64 = 8;
    pub const CORPUS: u64 = 9;
    pub const PRIOR_TRAIN: u64 = 10;
    pub const EXTRACTOR: u64 = 11;
    pub const MESH: u64 = 12;
    pub const REFINE: u64 = 13;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for `(seed, tag, index)`.
pub fn stream_rng(seed: u64, tag: u64, index: u64) -> RunRng {
    let mixed = splitmix64(seed ^ splitmix64(tag.wrapping_mul(0xA076_1D64_78BD_642F) ^ splitmix64(index)));
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(tag);
    rng
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

pub fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}
