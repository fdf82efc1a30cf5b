//! Seeded random streams.
//!
//! Every stochastic stage draws from its own ChaCha8 stream derived from the
//! scenario seed and a stream key, so adding draws in one stage never shifts
//! another stage's numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream(seed: u64, key: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, key))
}

/// Stream keyed by a stage and an entity id (image, target, ...).
pub fn substream(seed: u64, stage: u64, id: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(derive_seed(seed, stage), id))
}

pub fn gaussian(rng: &mut SimRng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * sigma
}

/// Normal(mean, sigma) truncated below at `min` by rejection.
pub fn truncated_normal(rng: &mut SimRng, mean: f64, sigma: f64, min: f64) -> f64 {
    if sigma > 0.0 {
        for _ in 0..1000 {
            let v = mean + gaussian(rng, sigma);
            if v >= min {
                return v;
            }
        }
    }
    mean.max(min)
}
