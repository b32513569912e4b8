use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, MAX_TOKENS};
use crate::error::{Error, Result};

/// One unit of moderation.
#[derive(Clone, Debug, PartialEq)]
pub struct Comment {
    pub id: String,
    pub text: String,
    /// Surface tokens, truncated to [`MAX_TOKENS`].
    pub tokens: Vec<String>,
    /// P(reject); 0.0 / 1.0 for binary labels.
    pub gold: Option<f64>,
    pub ts: i64,
}

impl Comment {
    pub fn new(id: impl Into<String>, text: impl Into<String>, gold: Option<f64>, ts: i64) -> Self {
        let text = text.into();
        let mut tokens = tokenize(&text);
        tokens.truncate(MAX_TOKENS);
        Self {
            id: id.into(),
            text,
            tokens,
            gold,
            ts,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<f64>,
    #[serde(default)]
    ts: i64,
}

/// Reads a JSON-lines dataset. Blank lines are skipped.
pub fn read_dataset(path: &Path) -> Result<Vec<Comment>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut comments = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| Error::format(path, n + 1, e.to_string()))?;
        if let Some(label) = record.label {
            if !(0.0..=1.0).contains(&label) {
                return Err(Error::format(
                    path,
                    n + 1,
                    format!("label out of range: {label}"),
                ));
            }
        }
        comments.push(Comment::new(
            record.id,
            record.text,
            record.label,
            record.ts,
        ));
    }
    Ok(comments)
}

pub fn write_dataset(path: &Path, comments: &[Comment]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for c in comments {
        let record = Record {
            id: c.id.clone(),
            text: c.text.clone(),
            label: c.gold,
            ts: c.ts,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
