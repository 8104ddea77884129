//! Seeded, splittable random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for `seed` on the default stream.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for sub-task `stream` of `seed`; draws do not depend
/// on which thread or in which order the sub-tasks run.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Vector of `n` independent standard normal draws.
pub fn standard_normal(rng: &mut Rng, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// A seed for sub-task `stream` of `seed`, for APIs that take plain seeds.
pub fn derive_seed(seed: u64, stream_id: u64) -> u64 {
    use rand::RngCore;
    stream(seed, stream_id).next_u64()
}
