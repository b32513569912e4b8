use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// The one generator type used for every random draw in the crate.
pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for a numbered sub-stream of a run seed.
pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform Glorot draw, shaped `fan_out × fan_in` (a weight matrix mapping
/// `fan_in` inputs to `fan_out` outputs).
pub fn glorot_init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    assert!(
        fan_in >= 1 && fan_out >= 1,
        "glorot_init needs positive fans"
    );
    let limit = glorot_limit(fan_in, fan_out);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Tensor::from_vec(&[fan_out, fan_in], data).expect("shape is consistent")
}
