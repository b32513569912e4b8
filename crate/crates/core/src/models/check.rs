use rand::Rng as _;

use super::{CnnConfig, Example, Model, ModelConfig, Variant};
use crate::error::Result;
use crate::gradcore::{finite_diff_check, seeded, GradCheck, Parameterized};

/// Sizes used for gradient verification: small enough to difference every entry.
#[derive(Clone, Debug)]
pub struct CheckConfig {
    pub vocab_rows: usize,
    pub d: usize,
    pub m: usize,
    pub r: usize,
    pub l: usize,
    pub max_len: usize,
    pub batch: usize,
    pub kernels_per_size: usize,
    pub epsilon: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            vocab_rows: 12,
            d: 8,
            m: 8,
            r: 6,
            l: 3,
            max_len: 6,
            batch: 3,
            kernels_per_size: 3,
            epsilon: 1e-5,
        }
    }
}

/// Builds a random model and batch for `variant` and compares the analytic
/// gradient of the mean cross-entropy with central differences.
pub fn check_variant_gradients(
    variant: Variant,
    seed: u64,
    cfg: &CheckConfig,
) -> Result<GradCheck> {
    let mut rng = seeded(seed);
    let config = ModelConfig {
        variant,
        vocab_rows: cfg.vocab_rows,
        d: cfg.d,
        m: cfg.m,
        r: cfg.r,
        l: cfg.l,
        cnn: CnnConfig {
            ngram_sizes: vec![1, 2, 3, 4],
            kernels_per_size: cfg.kernels_per_size,
            dropout_p: 0.5,
        },
    };
    let mut model = Model::init(config, None, &mut rng)?;
    // Non-zero biases so that no unit sits exactly at a ReLU kink.
    for p in model.params_mut() {
        if p.name.contains(".b") {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
        }
    }
    let batch: Vec<Example> = (0..cfg.batch)
        .map(|_| {
            let len = rng.random_range(1..=cfg.max_len);
            Example {
                ids: (0..len)
                    .map(|_| rng.random_range(0..cfg.vocab_rows))
                    .collect(),
                target: Some(rng.random::<f64>()),
            }
        })
        .collect();

    let mut failure = None;
    let report = finite_diff_check(
        &mut model,
        |m| match m.compute_gradients(&batch, None) {
            Ok(loss) => loss,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        |m| m.loss(&batch).unwrap_or(f64::NAN),
        cfg.epsilon,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
