//! Deterministic random streams.
//!
//! Every loop gets its own ChaCha8 stream: the key is derived from the
//! ensemble seed and the stream id is the loop index. Loop `k` is therefore
//! reproducible on its own, independent of how loops are split across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Random stream used for loop generation.
pub type Stream = ChaCha8Rng;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// SplitMix64 finalizer, used to decorrelate structured seed material.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and an index (t index, ensemble index, ...).
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix64(mix64(parent) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// The sub-stream for loop `index` of the ensemble seeded with `seed`.
pub fn loop_stream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed));
    rng.set_stream(index);
    rng
}

/// One normal draw with density proportional to exp(-w^2), i.e. variance 1/2.
#[inline]
pub fn half_normal_variance<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * FRAC_1_SQRT_2
}

/// A vector in R^d whose components are independent with density ∝ exp(-w^2).
pub fn gaussian_vector<R: rand::Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| half_normal_variance(rng)).collect()
}
