//! Counter-based seed derivation and seeded Gaussian draws.
//!
//! Every random quantity in the crate is a pure function of a 64-bit seed. Sub-seeds are
//! derived by hashing `(parent, tag...)` so that sample `i` of a job never depends on how
//! many draws other samples consumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of tags.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x5851_F42D_4C95_7F2D);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0x2545_F491_4F6C_DD1D)));
    }
    h
}

/// Short string tags hashed into a `u64` for use with [`derive`].
pub fn tag(name: &str) -> u64 {
    name.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01B3))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `len` standard-normal draws scaled by `scale`.
pub fn gaussian_vec<S: Real>(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<S> {
    (0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            S::lit(z * scale)
        })
        .collect()
}

pub fn uniform_vec<S: Real>(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<S> {
    (0..len).map(|_| S::lit(lo + (hi - lo) * rng.random::<f64>())).collect()
}
