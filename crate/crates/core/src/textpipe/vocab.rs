use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Token ↔ index mapping; index `len()` is reserved for out-of-vocabulary tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    doc_freq: Vec<usize>,
    min_freq: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from tokenized documents, keeping tokens whose
    /// document frequency is at least `min_freq`. Indices follow descending
    /// document frequency, ties broken lexicographically.
    pub fn build<'a, I, D>(documents: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        if min_freq == 0 {
            return Err(Error::InvalidArgument("min_freq must be at least 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in documents {
            let unique: HashSet<&str> = doc.into_iter().map(String::as_str).collect();
            for token in unique {
                *counts.entry(token).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_entries(
            kept.into_iter().map(|(t, c)| (t.to_string(), c)),
            min_freq,
        ))
    }

    fn from_entries(entries: impl IntoIterator<Item = (String, usize)>, min_freq: usize) -> Self {
        let mut vocab = Self {
            index: HashMap::new(),
            tokens: Vec::new(),
            doc_freq: Vec::new(),
            min_freq,
        };
        for (token, df) in entries {
            vocab.index.insert(token.clone(), vocab.tokens.len());
            vocab.tokens.push(token);
            vocab.doc_freq.push(df);
        }
        vocab
    }

    /// Number of surface tokens, excluding the OOV slot.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn oov_index(&self) -> usize {
        self.tokens.len()
    }

    /// Rows needed in an embedding table: one per token plus the OOV row.
    pub fn rows(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(self.oov_index())
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn doc_freq(&self, index: usize) -> Option<usize> {
        self.doc_freq.get(index).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// TSV dump: `token<TAB>index<TAB>doc_freq`, one line per token in index order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (t, df)) in self.tokens.iter().zip(&self.doc_freq).enumerate() {
            let _ = writeln!(out, "{t}\t{i}\t{df}");
        }
        out
    }

    pub fn from_tsv(text: &str, min_freq: usize, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let parsed = match fields.as_slice() {
                [token, index, df] => index
                    .parse::<usize>()
                    .ok()
                    .zip(df.parse::<usize>().ok())
                    .map(|(i, df)| (token.to_string(), i, df)),
                _ => None,
            };
            let (token, index, df) = parsed.ok_or_else(|| {
                Error::format(path, n + 1, "expected token<TAB>index<TAB>doc_freq")
            })?;
            if index != entries.len() {
                return Err(Error::format(
                    path,
                    n + 1,
                    format!("index {index} out of order"),
                ));
            }
            entries.push((token, df));
        }
        Ok(Self::from_entries(entries, min_freq))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, min_freq: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, min_freq, path)
    }

    /// Short content hash of the TSV dump.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_tsv().as_bytes());
        hex::encode(&digest[..8])
    }
}
