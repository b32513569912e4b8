//! Fixtures shared by the benchmarks.

use rand::Rng as _;

use graymod_core::gradcore::{seeded, Rng};
use graymod_core::metrics::{Scored, ScoredSet};
use graymod_core::models::{CnnConfig, Example};
use graymod_core::{Model, ModelConfig, Variant};

pub const VOCAB_ROWS: usize = 2_000;

/// Randomly initialized model at the given sizes.
pub fn model(variant: Variant, d: usize, m: usize, r: usize, l: usize) -> Model {
    let cfg = ModelConfig {
        variant,
        vocab_rows: VOCAB_ROWS,
        d,
        m,
        r,
        l,
        cnn: CnnConfig {
            kernels_per_size: 32,
            ..CnnConfig::wikipedia()
        },
    };
    Model::init(cfg, None, &mut seeded(1)).expect("valid bench config")
}

pub fn token_ids(rng: &mut Rng, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..VOCAB_ROWS)).collect()
}

pub fn batch(size: usize, len: usize, seed: u64) -> Vec<Example> {
    let mut rng = seeded(seed);
    (0..size)
        .map(|_| Example {
            ids: token_ids(&mut rng, len),
            target: Some(f64::from(u8::from(rng.random_bool(0.3)))),
        })
        .collect()
}

/// Development set with loosely informative scores.
pub fn dev_set(n: usize, seed: u64) -> ScoredSet {
    let mut rng = seeded(seed);
    let items = (0..n)
        .map(|i| {
            let gold = f64::from(u8::from(rng.random_bool(0.3)));
            let p: f64 = (0.3 * gold + 0.7 * rng.random::<f64>()).clamp(0.0, 1.0);
            Scored {
                id: format!("{i:06}"),
                p,
                gold,
                ts: i as i64,
            }
        })
        .collect();
    ScoredSet::new(items).expect("scores in range")
}
