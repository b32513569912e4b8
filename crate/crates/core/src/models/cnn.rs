use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::gru::add_in_place;
use crate::error::{Error, Result};
use crate::gradcore::{glorot_limit, Param, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub ngram_sizes: Vec<usize>,
    pub kernels_per_size: usize,
    pub dropout_p: f64,
}

impl CnnConfig {
    /// Word n-grams 1..=4, 300 kernels each.
    pub fn wikipedia() -> Self {
        Self {
            ngram_sizes: vec![1, 2, 3, 4],
            kernels_per_size: 300,
            dropout_p: 0.5,
        }
    }

    /// Word n-grams 1..=5, 300 kernels each.
    pub fn gazzetta() -> Self {
        Self {
            ngram_sizes: vec![1, 2, 3, 4, 5],
            ..Self::wikipedia()
        }
    }

    pub fn features(&self) -> usize {
        self.kernels_per_size * self.ngram_sizes.len()
    }

    pub fn max_ngram(&self) -> usize {
        self.ngram_sizes.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ngram_sizes.is_empty() || self.ngram_sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "n-gram sizes must be non-empty and positive".into(),
            ));
        }
        if self.kernels_per_size == 0 {
            return Err(Error::InvalidArgument(
                "kernels_per_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidArgument(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

/// Narrow stride-1 convolutions over word n-gram windows, ReLU, max-pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnParams {
    pub config: CnnConfig,
    /// One `kernels_per_size × (n · d)` matrix per n-gram size.
    pub kernels: Vec<Param>,
    pub biases: Vec<Param>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnTrace {
    /// Row-major `len × d` input, zero-padded on the right.
    pub padded: Vec<f64>,
    /// Pooled features before dropout.
    pub features: Vec<f64>,
    /// Winning window per feature, `None` when the pooled value is 0.
    pub argmax: Vec<Option<usize>>,
    /// Inverted-dropout multipliers, present only in training mode.
    pub mask: Option<Vec<f64>>,
}

impl CnnTrace {
    pub fn output(&self) -> Vec<f64> {
        match &self.mask {
            Some(mask) => self.features.iter().zip(mask).map(|(f, m)| f * m).collect(),
            None => self.features.clone(),
        }
    }
}

impl CnnParams {
    pub fn zeros(config: CnnConfig, d: usize) -> Result<Self> {
        config.validate()?;
        let k = config.kernels_per_size;
        let kernels = config
            .ngram_sizes
            .iter()
            .map(|&n| Param::zeros(format!("cnn.k{n}.w"), &[k, n * d]))
            .collect();
        let biases = config
            .ngram_sizes
            .iter()
            .map(|&n| Param::zeros(format!("cnn.k{n}.b"), &[k]))
            .collect();
        Ok(Self {
            config,
            kernels,
            biases,
        })
    }

    pub fn init(config: CnnConfig, d: usize, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(config, d)?;
        let k = p.config.kernels_per_size;
        for (w, &n) in p.kernels.iter_mut().zip(&p.config.ngram_sizes) {
            // Convolution fans: n·d inputs and n·k outputs per window.
            let limit = glorot_limit(n * d, n * k);
            for v in w.value.data_mut() {
                *v = rng.random_range(-limit..=limit);
            }
        }
        Ok(p)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.kernels
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.kernels
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub(crate) fn forward(&self, xs: &[&[f64]], d: usize, dropout: Option<&mut Rng>) -> CnnTrace {
        let len = xs.len().max(self.config.max_ngram());
        let mut padded = vec![0.0; len * d];
        for (t, x) in xs.iter().enumerate() {
            padded[t * d..(t + 1) * d].copy_from_slice(x);
        }
        let mut features = Vec::with_capacity(self.config.features());
        let mut argmax = Vec::with_capacity(self.config.features());
        for ((w, b), &n) in self
            .kernels
            .iter()
            .zip(&self.biases)
            .zip(&self.config.ngram_sizes)
        {
            let width = n * d;
            for (row, bias) in w.value.data().chunks_exact(width).zip(b.value.data()) {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0;
                for j in 0..=len - n {
                    let window = &padded[j * d..j * d + width];
                    let pre = bias + row.iter().zip(window).map(|(a, x)| a * x).sum::<f64>();
                    if pre > best {
                        best = pre;
                        best_at = j;
                    }
                }
                if best > 0.0 {
                    features.push(best);
                    argmax.push(Some(best_at));
                } else {
                    features.push(0.0);
                    argmax.push(None);
                }
            }
        }
        let mask = dropout.map(|rng| {
            let p = self.config.dropout_p;
            let keep = 1.0 / (1.0 - p);
            (0..features.len())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect()
        });
        CnnTrace {
            padded,
            features,
            argmax,
            mask,
        }
    }

    /// `d_out` is the gradient w.r.t. the (possibly dropped-out) feature
    /// vector; input gradients are added to `d_padded`.
    pub(crate) fn backward(
        &mut self,
        trace: &CnnTrace,
        d_out: &[f64],
        d: usize,
        d_padded: &mut [f64],
    ) {
        let k = self.config.kernels_per_size;
        for (s, &n) in self.config.ngram_sizes.iter().enumerate() {
            let width = n * d;
            for kern in 0..k {
                let f = s * k + kern;
                let Some(j) = trace.argmax[f] else { continue };
                let g = d_out[f] * trace.mask.as_ref().map_or(1.0, |m| m[f]);
                if g == 0.0 {
                    continue;
                }
                let window = &trace.padded[j * d..j * d + width];
                let row = &mut self.kernels[s].grad.data_mut()[kern * width..(kern + 1) * width];
                for (r, x) in row.iter_mut().zip(window) {
                    *r += g * x;
                }
                self.biases[s].grad.data_mut()[kern] += g;
                let w = &self.kernels[s].value.data()[kern * width..(kern + 1) * width];
                let scaled: Vec<f64> = w.iter().map(|v| g * v).collect();
                add_in_place(&mut d_padded[j * d..j * d + width], &scaled);
            }
        }
    }
}
