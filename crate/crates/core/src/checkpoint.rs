//! On-disk model format: a directory holding `manifest.json`, the
//! vocabulary dump `vocab.tsv`, and one raw little-endian `f32` file per
//! parameter (row-major, named after the parameter).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gradcore::{Parameterized, Tensor};
use crate::models::{CnnConfig, Model, ModelConfig, Variant};
use crate::textpipe::Vocabulary;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.tsv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub variant: Variant,
    pub d: usize,
    pub m: usize,
    pub r: usize,
    pub l: usize,
    pub vocab_fingerprint: String,
    pub seed: u64,
    pub vocab_rows: usize,
    pub min_freq: usize,
    pub cnn: CnnConfig,
    pub params: Vec<ParamEntry>,
}

impl Manifest {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            vocab_rows: self.vocab_rows,
            d: self.d,
            m: self.m,
            r: self.r,
            l: self.l,
            cnn: self.cnn.clone(),
        }
    }
}

fn param_bytes(t: &Tensor) -> Vec<u8> {
    t.data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

/// Content hash of the parameters as stored on disk.
pub fn model_fingerprint(model: &Model) -> String {
    let mut h = Sha256::new();
    h.update(model.config.variant.name().as_bytes());
    for p in model.params() {
        h.update(p.name.as_bytes());
        h.update(param_bytes(&p.value));
    }
    hex::encode(&h.finalize()[..6])
}

pub fn save(dir: &Path, model: &Model, vocab: &Vocabulary, seed: u64) -> Result<Manifest> {
    if vocab.rows() != model.config.vocab_rows {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} rows, model {}",
            vocab.rows(),
            model.config.vocab_rows
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = &model.config;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        variant: c.variant,
        d: c.d,
        m: c.m,
        r: c.r,
        l: c.l,
        vocab_fingerprint: vocab.fingerprint(),
        seed,
        vocab_rows: c.vocab_rows,
        min_freq: vocab.min_freq(),
        cnn: c.cnn.clone(),
        params: model
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    for p in model.params() {
        let path = dir.join(&p.name);
        fs::write(&path, param_bytes(&p.value)).map_err(|e| Error::io(&path, e))?;
    }
    vocab.save(&dir.join(VOCAB_FILE))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load(dir: &Path) -> Result<(Model, Vocabulary, Manifest)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE), manifest.min_freq)?;
    if vocab.fingerprint() != manifest.vocab_fingerprint {
        return Err(Error::Checkpoint(
            "vocabulary does not match the manifest fingerprint".into(),
        ));
    }
    let mut model = Model::zeros(manifest.model_config())?;
    {
        let mut params = model.params_mut();
        if params.len() != manifest.params.len() {
            return Err(Error::Checkpoint(format!(
                "manifest lists {} parameters, {} expects {}",
                manifest.params.len(),
                manifest.variant,
                params.len()
            )));
        }
        for (p, entry) in params.iter_mut().zip(&manifest.params) {
            if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    entry.name,
                    entry.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            let file = dir.join(&entry.name);
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            if bytes.len() != 4 * p.value.len() {
                return Err(Error::Checkpoint(format!(
                    "{} holds {} bytes, expected {}",
                    entry.name,
                    bytes.len(),
                    4 * p.value.len()
                )));
            }
            let values: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            p.value = Tensor::from_vec(&entry.shape, values)?;
        }
    }
    Ok((model, vocab, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::seeded;

    fn fixture(variant: Variant) -> (Model, Vocabulary) {
        let docs = vec![
            vec!["a".to_string(), "b".to_string()],
            vec!["a".to_string()],
        ];
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let cfg = ModelConfig {
            d: 4,
            m: 3,
            r: 2,
            l: 3,
            cnn: CnnConfig {
                ngram_sizes: vec![1, 2],
                kernels_per_size: 2,
                dropout_p: 0.5,
            },
            ..ModelConfig::new(variant, vocab.rows())
        };
        let mut model = Model::init(cfg, None, &mut seeded(3)).unwrap();
        model.round_to_f32();
        (model, vocab)
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        for variant in Variant::NEURAL {
            let (model, vocab) = fixture(variant);
            let dir = tempfile::tempdir().unwrap();
            save(dir.path(), &model, &vocab, 7).unwrap();
            let (back, vocab_back, manifest) = load(dir.path()).unwrap();
            assert_eq!(vocab_back, vocab);
            assert_eq!(manifest.seed, 7);
            for (a, b) in model.params().iter().zip(back.params()) {
                assert_eq!(a.value, b.value, "{}", a.name);
            }
            assert_eq!(model_fingerprint(&model), model_fingerprint(&back));
        }
    }

    #[test]
    fn raw_files_are_little_endian_f32() {
        let (model, vocab) = fixture(Variant::Rnn);
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &model, &vocab, 0).unwrap();
        let bytes = fs::read(dir.path().join("head.b_p")).unwrap();
        assert_eq!(bytes.len(), 4);
        let v = f32::from_le_bytes(bytes.try_into().unwrap());
        assert_eq!(f64::from(v), model.head.b_p.value.data()[0]);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
        for key in [
            "format_version",
            "variant",
            "d",
            "m",
            "r",
            "l",
            "vocab_fingerprint",
            "seed",
        ] {
            assert!(manifest.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn corrupted_checkpoints_fail() {
        let (model, vocab) = fixture(Variant::ARnn);
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &model, &vocab, 0).unwrap();
        fs::write(dir.path().join("head.w_p"), [0u8; 3]).unwrap();
        assert!(load(dir.path()).is_err());
        fs::write(dir.path().join(VOCAB_FILE), "zzz\t0\t1\n").unwrap();
        assert!(load(dir.path())
            .unwrap_err()
            .to_string()
            .contains("fingerprint"));
    }
}
