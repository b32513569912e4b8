use serde::{Deserialize, Serialize};

use super::attention::{AttentionParams, AttentionTrace};
use super::cnn::{CnnConfig, CnnParams, CnnTrace};
use super::gru::{add_in_place, run_chain, GruParams, GruStep};
use super::{Prediction, Variant};
use crate::error::{Error, Result};
use crate::gradcore::{
    cross_entropy, cross_entropy_logit_grad, glorot_init, sigmoid_scalar, Param, Parameterized, Rng,
};
use crate::textpipe::{random_embeddings, EmbeddingTable};

/// Architecture of one neural scorer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Embedding rows, vocabulary size plus the OOV row.
    pub vocab_rows: usize,
    /// Embedding width.
    pub d: usize,
    /// GRU hidden width.
    pub m: usize,
    /// Attention hidden width.
    pub r: usize,
    /// Attention layer count.
    pub l: usize,
    pub cnn: CnnConfig,
}

impl ModelConfig {
    /// Full-size defaults: `l = 4`, `d = 300`, `m = r = 128`, CNN over 1..4-grams.
    pub fn new(variant: Variant, vocab_rows: usize) -> Self {
        Self {
            variant,
            vocab_rows,
            d: 300,
            m: 128,
            r: 128,
            l: 4,
            cnn: CnnConfig::wikipedia(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == Variant::List {
            return Err(Error::InvalidArgument(
                "the list baseline has no neural parameters".into(),
            ));
        }
        if self.vocab_rows == 0 || self.d == 0 || self.m == 0 || self.r == 0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate model sizes {self:?}"
            )));
        }
        if self.variant.has_attention() && self.l < 2 {
            return Err(Error::InvalidArgument(format!(
                "attention needs l >= 2, got {}",
                self.l
            )));
        }
        if self.variant == Variant::Cnn {
            self.cnn.validate()?;
        }
        Ok(())
    }

    pub fn head_input(&self) -> usize {
        match self.variant {
            Variant::DaCent | Variant::EqCent => self.d,
            Variant::Cnn => self.cnn.features(),
            _ => self.m,
        }
    }

    fn attention_input(&self) -> usize {
        if self.variant == Variant::ARnn {
            self.m
        } else {
            self.d
        }
    }
}

/// Logistic-regression output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub w_p: Param,
    pub b_p: Param,
}

/// A labeled, encoded comment ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub ids: Vec<usize>,
    /// Training target in [0, 1]; soft targets allowed.
    pub target: Option<f64>,
}

/// A forward pass with everything needed to backpropagate through it.
#[derive(Clone, Debug)]
pub struct Forward {
    pub p: f64,
    pub logit: f64,
    /// The vector fed to the output layer.
    pub features: Vec<f64>,
    /// Pooling weights actually used (attention output or an override).
    pub attention: Option<Vec<f64>>,
    pub steps: Vec<GruStep>,
    pub attention_trace: Option<AttentionTrace>,
    pub cnn_trace: Option<CnnTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub embeddings: Param,
    pub gru: Option<GruParams>,
    pub attention: Option<AttentionParams>,
    pub cnn: Option<CnnParams>,
    pub head: Head,
}

impl Model {
    /// All parameters zero; used as a skeleton for checkpoint loading.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let v = config.variant;
        let gru = v.uses_gru().then(|| GruParams::zeros(config.d, config.m));
        let attention = if v.has_attention() {
            Some(AttentionParams::zeros(
                config.attention_input(),
                config.r,
                config.l,
            )?)
        } else {
            None
        };
        let cnn = if v == Variant::Cnn {
            Some(CnnParams::zeros(config.cnn.clone(), config.d)?)
        } else {
            None
        };
        let head = Head {
            w_p: Param::zeros("head.w_p", &[1, config.head_input()]),
            b_p: Param::zeros("head.b_p", &[1]),
        };
        Ok(Self {
            embeddings: Param::zeros("embeddings", &[config.vocab_rows, config.d]),
            config,
            gru,
            attention,
            cnn,
            head,
        })
    }

    /// Glorot-initialized weights and zero biases. Embeddings are drawn at
    /// random unless a pretrained table is supplied.
    pub fn init(
        config: ModelConfig,
        embeddings: Option<EmbeddingTable>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let (rows, d) = (model.config.vocab_rows, model.config.d);
        let table = match embeddings {
            Some(t) if t.rows() == rows && t.dim() == d => t,
            Some(t) => {
                return Err(Error::Shape(format!(
                    "embedding table is {}×{}, model expects {rows}×{d}",
                    t.rows(),
                    t.dim()
                )))
            }
            None => random_embeddings(rows, d, rng),
        };
        model.embeddings.value = table.table;
        if let Some(g) = &mut model.gru {
            *g = GruParams::init(d, model.config.m, rng);
        }
        if let Some(a) = &mut model.attention {
            *a = AttentionParams::init(a.input(), model.config.r, model.config.l, rng)?;
        }
        if let Some(c) = &mut model.cnn {
            *c = CnnParams::init(c.config.clone(), d, rng)?;
        }
        model.head.w_p.value = glorot_init(model.config.head_input(), 1, rng);
        Ok(model)
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&t| t >= self.config.vocab_rows) {
            Some(bad) => Err(Error::InvalidArgument(format!(
                "token id {bad} outside the embedding table of {} rows",
                self.config.vocab_rows
            ))),
            None => Ok(()),
        }
    }

    /// Forward pass. `pool_override` replaces the attention weights of the
    /// attention variants; `dropout` enables training-mode CNN dropout.
    pub fn forward(
        &self,
        ids: &[usize],
        pool_override: Option<&[f64]>,
        dropout: Option<&mut Rng>,
    ) -> Result<Forward> {
        self.check_ids(ids)?;
        let variant = self.variant();
        if let Some(w) = pool_override {
            if !variant.has_attention() {
                return Err(Error::InvalidArgument(format!(
                    "{variant} has no attention to override"
                )));
            }
            if w.len() != ids.len() {
                return Err(Error::Shape(format!(
                    "override has {} weights for {} tokens",
                    w.len(),
                    ids.len()
                )));
            }
        }
        if ids.is_empty() {
            return Ok(Forward {
                p: 0.5,
                logit: 0.0,
                features: Vec::new(),
                attention: variant.has_attention().then(Vec::new),
                steps: Vec::new(),
                attention_trace: None,
                cnn_trace: None,
            });
        }

        let d = self.config.d;
        let xs: Vec<&[f64]> = ids.iter().map(|&t| self.embeddings.value.row(t)).collect();
        let k = xs.len();
        let steps = match &self.gru {
            Some(g) => run_chain(&xs, g),
            None => Vec::new(),
        };
        let hs: Vec<&[f64]> = steps.iter().map(|s| s.h.as_slice()).collect();

        let mut attention_trace = None;
        let mut cnn_trace = None;
        let pool = |weights: &[f64], vectors: &[&[f64]]| -> Vec<f64> {
            let mut v = vec![0.0; vectors[0].len()];
            for (a, x) in weights.iter().zip(vectors) {
                for (o, xi) in v.iter_mut().zip(*x) {
                    *o += a * xi;
                }
            }
            v
        };
        let mean = |vectors: &[&[f64]]| -> Vec<f64> {
            let mut v = vec![0.0; vectors[0].len()];
            for x in vectors {
                add_in_place(&mut v, x);
            }
            v.iter_mut().for_each(|o| *o /= k as f64);
            v
        };

        let mut attention = None;
        if variant.has_attention() {
            let weights = match pool_override {
                Some(w) => w.to_vec(),
                None => {
                    let inputs = if variant == Variant::ARnn { &hs } else { &xs };
                    let trace = self
                        .attention
                        .as_ref()
                        .expect("attention variant has attention params")
                        .forward(inputs)?;
                    let w = trace.weights.clone();
                    attention_trace = Some(trace);
                    w
                }
            };
            attention = Some(weights);
        }

        let features = match variant {
            Variant::Rnn => hs[k - 1].to_vec(),
            Variant::ARnn | Variant::DaRnn => pool(attention.as_deref().unwrap_or_default(), &hs),
            Variant::EqRnn => mean(&hs),
            Variant::DaCent => pool(attention.as_deref().unwrap_or_default(), &xs),
            Variant::EqCent => mean(&xs),
            Variant::Cnn => {
                let trace = self
                    .cnn
                    .as_ref()
                    .expect("cnn variant has cnn params")
                    .forward(&xs, d, dropout);
                let out = trace.output();
                cnn_trace = Some(trace);
                out
            }
            Variant::List => unreachable!("rejected by ModelConfig::validate"),
        };

        let logit = self.head.b_p.value.data()[0]
            + self
                .head
                .w_p
                .value
                .data()
                .iter()
                .zip(&features)
                .map(|(w, f)| w * f)
                .sum::<f64>();
        Ok(Forward {
            p: sigmoid_scalar(logit),
            logit,
            features,
            attention,
            steps,
            attention_trace,
            cnn_trace,
        })
    }

    pub fn predict(&self, ids: &[usize]) -> Result<Prediction> {
        let f = self.forward(ids, None, None)?;
        Ok(Prediction {
            p: f.p,
            attention: f.attention,
        })
    }

    /// Prediction with the attention output replaced by `weights`.
    pub fn predict_with_attention(&self, ids: &[usize], weights: &[f64]) -> Result<Prediction> {
        let f = self.forward(ids, Some(weights), None)?;
        Ok(Prediction {
            p: f.p,
            attention: f.attention,
        })
    }

    /// Accumulates `dlogit · ∂logit/∂θ` into every parameter gradient.
    pub fn backward(&mut self, ids: &[usize], fwd: &Forward, dlogit: f64) {
        if ids.is_empty() || dlogit == 0.0 {
            return;
        }
        let variant = self.config.variant;
        let d = self.config.d;
        let k = ids.len();
        let Model {
            embeddings,
            gru,
            attention,
            cnn,
            head,
            ..
        } = self;

        for (g, f) in head.w_p.grad.data_mut().iter_mut().zip(&fwd.features) {
            *g += dlogit * f;
        }
        head.b_p.grad.data_mut()[0] += dlogit;
        let dv: Vec<f64> = head.w_p.value.data().iter().map(|w| dlogit * w).collect();

        let xs: Vec<&[f64]> = ids.iter().map(|&t| embeddings.value.row(t)).collect();
        let hs: Vec<&[f64]> = fwd.steps.iter().map(|s| s.h.as_slice()).collect();
        let m = gru.as_ref().map_or(0, |g| g.hidden());
        let mut dh = vec![vec![0.0; m]; if variant.uses_gru() { k } else { 0 }];
        let mut dx = vec![vec![0.0; d]; k];
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

        match variant {
            Variant::Rnn => add_in_place(&mut dh[k - 1], &dv),
            Variant::EqRnn => {
                let scaled: Vec<f64> = dv.iter().map(|g| g / k as f64).collect();
                dh.iter_mut().for_each(|row| add_in_place(row, &scaled));
            }
            Variant::EqCent => {
                let scaled: Vec<f64> = dv.iter().map(|g| g / k as f64).collect();
                dx.iter_mut().for_each(|row| add_in_place(row, &scaled));
            }
            Variant::ARnn | Variant::DaRnn | Variant::DaCent => {
                let weights = fwd.attention.as_deref().expect("attention variant");
                let pooled = if variant == Variant::DaCent { &xs } else { &hs };
                let targets = if variant == Variant::DaCent {
                    &mut dx
                } else {
                    &mut dh
                };
                let mut d_weights = Vec::with_capacity(k);
                for t in 0..k {
                    for (o, g) in targets[t].iter_mut().zip(&dv) {
                        *o += weights[t] * g;
                    }
                    d_weights.push(dot(&dv, pooled[t]));
                }
                if let (Some(trace), Some(att)) = (&fwd.attention_trace, attention.as_mut()) {
                    if variant == Variant::ARnn {
                        att.backward(&hs, trace, &d_weights, &mut dh);
                    } else {
                        att.backward(&xs, trace, &d_weights, &mut dx);
                    }
                }
            }
            Variant::Cnn => {
                let trace = fwd.cnn_trace.as_ref().expect("cnn trace");
                let mut d_padded = vec![0.0; trace.padded.len()];
                cnn.as_mut()
                    .expect("cnn params")
                    .backward(trace, &dv, d, &mut d_padded);
                for (t, row) in dx.iter_mut().enumerate() {
                    add_in_place(row, &d_padded[t * d..(t + 1) * d]);
                }
            }
            Variant::List => unreachable!(),
        }

        if let Some(g) = gru.as_mut() {
            g.backward(&xs, &fwd.steps, &dh, &mut dx);
        }
        for (&id, g) in ids.iter().zip(&dx) {
            add_in_place(embeddings.grad.row_mut(id), g);
        }
    }

    /// Zeroes the gradients, then fills them with the gradient of the mean
    /// cross-entropy over `batch`. Returns that mean loss.
    pub fn compute_gradients(
        &mut self,
        batch: &[Example],
        mut dropout: Option<&mut Rng>,
    ) -> Result<f64> {
        self.zero_grads();
        if batch.is_empty() {
            return Ok(0.0);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for ex in batch {
            let y = ex
                .target
                .ok_or_else(|| Error::Data("cannot train on an unlabeled comment".into()))?;
            let fwd = self.forward(&ex.ids, None, dropout.as_deref_mut())?;
            total += cross_entropy(fwd.p, y);
            let dlogit = cross_entropy_logit_grad(fwd.p, y) * scale;
            self.backward(&ex.ids, &fwd, dlogit);
        }
        Ok(total * scale)
    }

    /// Mean cross-entropy in inference mode.
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for ex in batch {
            let y = ex
                .target
                .ok_or_else(|| Error::Data("cannot score loss of an unlabeled comment".into()))?;
            total += cross_entropy(self.forward(&ex.ids, None, None)?.p, y);
        }
        Ok(total / batch.len() as f64)
    }

    /// Rounds every parameter to `f32` precision, the checkpoint storage format.
    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.value.round_to_f32();
        }
    }
}

impl Parameterized for Model {
    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.embeddings];
        if let Some(g) = &self.gru {
            out.extend(g.params());
        }
        if let Some(a) = &self.attention {
            out.extend(a.params());
        }
        if let Some(c) = &self.cnn {
            out.extend(c.params());
        }
        out.push(&self.head.w_p);
        out.push(&self.head.b_p);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.embeddings];
        if let Some(g) = &mut self.gru {
            out.extend(g.params_mut());
        }
        if let Some(a) = &mut self.attention {
            out.extend(a.params_mut());
        }
        if let Some(c) = &mut self.cnn {
            out.extend(c.params_mut());
        }
        out.push(&mut self.head.w_p);
        out.push(&mut self.head.b_p);
        out
    }
}
