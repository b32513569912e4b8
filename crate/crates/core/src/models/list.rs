use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::textpipe::Comment;

use super::{is_reject, Prediction};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ListEntry {
    pub doc_freq: usize,
    pub rejected_df: usize,
    pub precision: f64,
}

/// Word-precision list: for each word seen in more than `min_df` training
/// comments, the fraction of those comments that were rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct WordList {
    pub entries: BTreeMap<String, ListEntry>,
    pub min_df: usize,
}

impl WordList {
    /// Probabilistic labels are thresholded at 0.5; unlabeled comments are skipped.
    pub fn build(train: &[Comment], min_df: usize) -> Result<Self> {
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        let mut labeled = 0usize;
        for c in train {
            let Some(gold) = c.gold else { continue };
            labeled += 1;
            let reject = is_reject(gold);
            let unique: HashSet<&str> = c.tokens.iter().map(String::as_str).collect();
            for token in unique {
                let e = counts.entry(token).or_default();
                e.0 += 1;
                e.1 += usize::from(reject);
            }
        }
        if labeled == 0 {
            return Err(Error::Data(
                "word list needs at least one labeled comment".into(),
            ));
        }
        let entries = counts
            .into_iter()
            .filter(|&(_, (df, _))| df > min_df)
            .map(|(t, (df, rej))| {
                (
                    t.to_string(),
                    ListEntry {
                        doc_freq: df,
                        rejected_df: rej,
                        precision: rej as f64 / df as f64,
                    },
                )
            })
            .collect();
        Ok(Self { entries, min_df })
    }

    pub fn precision(&self, token: &str) -> Option<f64> {
        self.entries.get(token).map(|e| e.precision)
    }

    /// Maximum precision over the listed tokens of the comment, 0 if none is listed.
    pub fn score<S: AsRef<str>>(&self, tokens: &[S]) -> Prediction {
        let p = tokens
            .iter()
            .filter_map(|t| self.precision(t.as_ref()))
            .fold(0.0, f64::max);
        Prediction { p, attention: None }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `token<TAB>doc_freq<TAB>precision`, by descending precision then token.
    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<(&String, &ListEntry)> = self.entries.iter().collect();
        rows.sort_by(|a, b| {
            b.1.precision
                .total_cmp(&a.1.precision)
                .then_with(|| a.0.cmp(b.0))
        });
        let mut out = String::new();
        for (t, e) in rows {
            let _ = writeln!(out, "{t}\t{}\t{}", e.doc_freq, e.precision);
        }
        out
    }

    pub fn from_tsv(text: &str, min_df: usize, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parsed = match line.split('\t').collect::<Vec<_>>().as_slice() {
                [t, df, p] => df
                    .parse::<usize>()
                    .ok()
                    .zip(p.parse::<f64>().ok().filter(|p| (0.0..=1.0).contains(p)))
                    .map(|(df, p)| (t.to_string(), df, p)),
                _ => None,
            };
            let (token, doc_freq, precision) = parsed.ok_or_else(|| {
                Error::format(path, n + 1, "expected token<TAB>doc_freq<TAB>precision")
            })?;
            let rejected_df = (precision * doc_freq as f64).round() as usize;
            entries.insert(
                token,
                ListEntry {
                    doc_freq,
                    rejected_df,
                    precision,
                },
            );
        }
        Ok(Self { entries, min_df })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        // The minimum document frequency is not part of the file format.
        Self::from_tsv(&text, 0, path)
    }
}

pub fn list_build(train: &[Comment], min_df: usize) -> Result<WordList> {
    WordList::build(train, min_df)
}

pub fn list_score<S: AsRef<str>>(tokens: &[S], list: &WordList) -> Prediction {
    list.score(tokens)
}
