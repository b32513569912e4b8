//! Mini-batch training with a held-out split and early stopping.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{adam_step, stream_rng, AdamConfig, Parameterized};
use crate::metrics::{auc, Scored, ScoredSet};
use crate::models::{is_reject, CnnConfig, Example, Model, ModelConfig, Variant};
use crate::textpipe::{load_embeddings, Comment, Vocabulary};

// Sub-streams of the run seed.
const SPLIT_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const SHUFFLE_STREAM_BASE: u64 = 1_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Gold labels thresholded at 0.5.
    #[default]
    Binary,
    /// Gold labels used as soft targets.
    Probabilistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub d: usize,
    pub m: usize,
    pub r: usize,
    pub l: usize,
    pub cnn: CnnConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub heldout_frac: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Pretrained embeddings in word2vec text format; random when absent.
    pub embeddings: Option<PathBuf>,
    /// Minimum document frequency for a vocabulary token.
    pub min_freq: usize,
    pub target: TargetMode,
}

impl TrainConfig {
    pub fn new(variant: Variant) -> Self {
        let base = ModelConfig::new(variant, 1);
        Self {
            variant,
            d: base.d,
            m: base.m,
            r: base.r,
            l: base.l,
            cnn: base.cnn,
            batch_size: 32,
            max_epochs: 50,
            patience: 3,
            heldout_frac: 0.02,
            seed: 0,
            adam: AdamConfig::default(),
            embeddings: None,
            min_freq: 2,
            target: TargetMode::Binary,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.heldout_frac > 0.0 && self.heldout_frac < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "heldout_frac must be in (0, 1), got {}",
                self.heldout_frac
            )));
        }
        if self.patience == 0 || self.batch_size == 0 || self.min_freq == 0 {
            return Err(Error::InvalidArgument(
                "patience, batch_size and min_freq must be at least 1".into(),
            ));
        }
        self.adam.validate()?;
        self.model_config(1).validate()
    }

    pub fn model_config(&self, vocab_rows: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            vocab_rows,
            d: self.d,
            m: self.m,
            r: self.r,
            l: self.l,
            cnn: self.cnn.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub first_batch_loss: f64,
    pub last_batch_loss: f64,
    pub heldout_auc: Option<f64>,
    pub heldout_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: Variant,
    pub seed: u64,
    pub n_train: usize,
    pub n_heldout: usize,
    pub vocab_size: usize,
    pub embedding_coverage: Option<f64>,
    /// Held-out scores of the initial model.
    pub initial_heldout_auc: Option<f64>,
    pub initial_heldout_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// 0 means the initial model was never beaten.
    pub best_epoch: usize,
    pub best_heldout_auc: Option<f64>,
    pub best_heldout_loss: f64,
    pub stopped_early: bool,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    pub vocab: Vocabulary,
    pub report: TrainReport,
    pub heldout: Vec<Comment>,
}

/// Deterministic split; the held-out part has `round(frac · N)` comments,
/// at least one.
pub fn split_heldout(
    data: &[Comment],
    frac: f64,
    seed: u64,
) -> Result<(Vec<Comment>, Vec<Comment>)> {
    if data.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 comments to hold some out, got {}",
            data.len()
        )));
    }
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "held-out fraction {frac} not in (0, 1)"
        )));
    }
    let n = data.len();
    let k = ((frac * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, SPLIT_STREAM));
    let mut held: Vec<usize> = order[..k].to_vec();
    held.sort_unstable();
    let mut is_held = vec![false; n];
    for &i in &held {
        is_held[i] = true;
    }
    let (mut train, mut heldout) = (Vec::with_capacity(n - k), Vec::with_capacity(k));
    for (c, h) in data.iter().zip(is_held) {
        if h {
            heldout.push(c.clone());
        } else {
            train.push(c.clone());
        }
    }
    Ok((train, heldout))
}

fn examples(comments: &[Comment], vocab: &Vocabulary, mode: TargetMode) -> Result<Vec<Example>> {
    comments
        .iter()
        .map(|c| {
            let gold = c
                .gold
                .ok_or_else(|| Error::Data(format!("comment {} has no label", c.id)))?;
            let target = match mode {
                TargetMode::Binary => f64::from(u8::from(is_reject(gold))),
                TargetMode::Probabilistic => gold,
            };
            Ok(Example {
                ids: vocab.encode(&c.tokens),
                target: Some(target),
            })
        })
        .collect()
}

struct HeldoutScore {
    auc: Option<f64>,
    loss: f64,
}

impl HeldoutScore {
    /// AUC when defined, otherwise negative loss.
    fn metric(&self) -> f64 {
        self.auc.unwrap_or(-self.loss)
    }
}

fn score_heldout(model: &Model, heldout: &[Comment], examples: &[Example]) -> Result<HeldoutScore> {
    let mut items = Vec::with_capacity(heldout.len());
    for (c, ex) in heldout.iter().zip(examples) {
        items.push(Scored {
            id: c.id.clone(),
            p: model.predict(&ex.ids)?.p,
            gold: c.gold.unwrap_or_default(),
            ts: c.ts,
        });
    }
    let set = ScoredSet::new(items)?;
    Ok(HeldoutScore {
        auc: auc(&set).ok(),
        loss: model.loss(examples)?,
    })
}

fn snapshot(model: &Model) -> Model {
    let mut s = model.clone();
    s.round_to_f32();
    s
}

/// Trains `config.variant` on `data`. The vocabulary comes from the training
/// split only. The returned model is the best held-out snapshot, rounded to
/// checkpoint precision.
pub fn train(data: &[Comment], config: &TrainConfig) -> Result<Trained> {
    config.validate()?;
    let start = Instant::now();
    let (train_set, heldout) = split_heldout(data, config.heldout_frac, config.seed)?;

    let docs: Vec<&Vec<String>> = train_set.iter().map(|c| &c.tokens).collect();
    let vocab = Vocabulary::build(docs, config.min_freq)?;
    let mut init_rng = stream_rng(config.seed, INIT_STREAM);
    let (table, coverage) = match &config.embeddings {
        Some(path) => {
            let (t, cov) = load_embeddings(path, &vocab, config.d, &mut init_rng)?;
            (Some(t), Some(cov))
        }
        None => (None, None),
    };
    let mut model = Model::init(config.model_config(vocab.rows()), table, &mut init_rng)?;

    let train_ex = examples(&train_set, &vocab, config.target)?;
    let held_ex = examples(&heldout, &vocab, config.target)?;

    let mut best = snapshot(&model);
    let initial = score_heldout(&best, &heldout, &held_ex)?;
    let mut report = TrainReport {
        variant: config.variant,
        seed: config.seed,
        n_train: train_set.len(),
        n_heldout: heldout.len(),
        vocab_size: vocab.len(),
        embedding_coverage: coverage,
        initial_heldout_auc: initial.auc,
        initial_heldout_loss: initial.loss,
        epochs: Vec::new(),
        best_epoch: 0,
        best_heldout_auc: initial.auc,
        best_heldout_loss: initial.loss,
        stopped_early: false,
        wall_seconds: 0.0,
    };
    let mut best_metric = initial.metric();
    let mut stale = 0usize;
    let mut dropout_rng = stream_rng(config.seed, DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(
            config.seed,
            SHUFFLE_STREAM_BASE + epoch as u64,
        ));
        let (mut total, mut batches) = (0.0, 0usize);
        let (mut first, mut last) = (0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_ex[i].clone()));
            let loss = model.compute_gradients(&batch, Some(&mut dropout_rng))?;
            adam_step(&mut model.params_mut(), &config.adam)?;
            if batches == 0 {
                first = loss;
            }
            last = loss;
            total += loss;
            batches += 1;
        }
        let snap = snapshot(&model);
        let score = score_heldout(&snap, &heldout, &held_ex)?;
        report.epochs.push(EpochStats {
            epoch,
            train_loss: if batches == 0 {
                0.0
            } else {
                total / batches as f64
            },
            first_batch_loss: first,
            last_batch_loss: last,
            heldout_auc: score.auc,
            heldout_loss: score.loss,
        });
        if score.metric() > best_metric {
            best_metric = score.metric();
            best = snap;
            report.best_epoch = epoch;
            report.best_heldout_auc = score.auc;
            report.best_heldout_loss = score.loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                report.stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(Trained {
        model: best,
        vocab,
        report,
        heldout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::gen_synthetic;

    fn small(variant: Variant) -> TrainConfig {
        TrainConfig {
            d: 8,
            m: 8,
            r: 6,
            l: 3,
            cnn: CnnConfig {
                ngram_sizes: vec![1, 2],
                kernels_per_size: 4,
                dropout_p: 0.5,
            },
            max_epochs: 2,
            heldout_frac: 0.1,
            seed: 5,
            ..TrainConfig::new(variant)
        }
    }

    #[test]
    fn split_sizes() {
        let data = gen_synthetic(100, 0.3, 1).unwrap();
        let (train, held) = split_heldout(&data, 0.02, 9).unwrap();
        assert_eq!((train.len(), held.len()), (98, 2));
        let (_, again) = split_heldout(&data, 0.02, 9).unwrap();
        assert_eq!(held, again);
        for h in &held {
            assert!(!train.iter().any(|t| t.id == h.id));
        }
        let (t2, h2) = split_heldout(&data[..2], 0.02, 0).unwrap();
        assert_eq!((t2.len(), h2.len()), (1, 1));
        assert!(split_heldout(&data[..1], 0.02, 0).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data = gen_synthetic(60, 0.3, 2).unwrap();
        let cfg = TrainConfig {
            max_epochs: 0,
            ..small(Variant::ARnn)
        };
        let out = train(&data, &cfg).unwrap();
        assert!(out.report.epochs.is_empty());
        assert_eq!(out.report.best_epoch, 0);
        assert!(!out.report.stopped_early);

        let (train_set, _) = split_heldout(&data, cfg.heldout_frac, cfg.seed).unwrap();
        let docs: Vec<&Vec<String>> = train_set.iter().map(|c| &c.tokens).collect();
        let vocab = Vocabulary::build(docs, cfg.min_freq).unwrap();
        let mut init = Model::init(
            cfg.model_config(vocab.rows()),
            None,
            &mut stream_rng(cfg.seed, INIT_STREAM),
        )
        .unwrap();
        init.round_to_f32();
        assert_eq!(out.model, init);
    }

    #[test]
    fn runs_are_deterministic() {
        let data = gen_synthetic(80, 0.3, 3).unwrap();
        for variant in [Variant::DaRnn, Variant::Cnn] {
            let a = train(&data, &small(variant)).unwrap();
            let b = train(&data, &small(variant)).unwrap();
            assert_eq!(a.model, b.model);
            assert_eq!(a.report.epochs, b.report.epochs);
        }
    }

    #[test]
    fn first_epoch_loss_falls_on_synthetic_data() {
        let data = gen_synthetic(400, 0.3, 4).unwrap();
        let cfg = TrainConfig {
            max_epochs: 1,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            ..small(Variant::ARnn)
        };
        let out = train(&data, &cfg).unwrap();
        let e = &out.report.epochs[0];
        assert!(e.last_batch_loss < e.first_batch_loss, "{e:?}");
    }

    #[test]
    fn rejects_bad_configs_and_unlabeled_data() {
        let data = gen_synthetic(20, 0.3, 0).unwrap();
        for cfg in [
            TrainConfig {
                heldout_frac: 0.0,
                ..small(Variant::Rnn)
            },
            TrainConfig {
                patience: 0,
                ..small(Variant::Rnn)
            },
            TrainConfig {
                batch_size: 0,
                ..small(Variant::Rnn)
            },
            small(Variant::List),
        ] {
            assert!(train(&data, &cfg).is_err());
        }
        let mut unlabeled = data.clone();
        unlabeled[0].gold = None;
        unlabeled[1].gold = None;
        assert!(train(&unlabeled, &small(Variant::Rnn)).is_err());
    }

    #[test]
    fn report_serializes() {
        let data = gen_synthetic(40, 0.3, 6).unwrap();
        let out = train(&data, &small(Variant::Rnn)).unwrap();
        let json = serde_json::to_value(&out.report).unwrap();
        for key in ["epochs", "best_epoch", "stopped_early", "wall_seconds"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(out.report.best_epoch <= out.report.epochs.len());
    }
}
