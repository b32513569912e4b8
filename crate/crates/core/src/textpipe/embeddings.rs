use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng as _;

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::gradcore::{glorot_limit, Rng, Tensor};

/// `|V| + 1` rows of width `d`; the last row is the shared OOV embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub table: Tensor,
}

impl EmbeddingTable {
    pub fn rows(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }
}

/// Every row drawn uniformly from the Glorot range of a `1 → d` map.
pub fn random_embeddings(rows: usize, d: usize, rng: &mut Rng) -> EmbeddingTable {
    let limit = glorot_limit(1, d);
    let data = (0..rows * d)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    EmbeddingTable {
        table: Tensor::from_vec(&[rows, d], data).expect("consistent shape"),
    }
}

/// Loads word vectors in text format (`<count> <dim>` header, then
/// `<token> <v1> … <v_dim>` lines) for the tokens of `vocab`.
///
/// Rows not found in the file, and the OOV row, keep their random
/// initialization. Returns the table and the fraction of vocabulary tokens
/// found in the file.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    d: usize,
    rng: &mut Rng,
) -> Result<(EmbeddingTable, f64)> {
    let mut table = random_embeddings(vocab.rows(), d, rng);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, 1, "missing header"))?
        .map_err(|e| Error::io(path, e))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match fields.as_slice() {
        [c, d] => c.parse::<usize>().ok().zip(d.parse::<usize>().ok()),
        _ => None,
    }
    .ok_or_else(|| Error::format(path, 1, "header must be `<count> <dim>`"))?;
    if dim != d {
        return Err(Error::format(
            path,
            1,
            format!("dimension mismatch: file has {dim}, expected {d}"),
        ));
    }

    let mut found = vec![false; vocab.len()];
    let mut seen = 0usize;
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        seen += 1;
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let token = parts.next().unwrap_or_default();
        let values: Vec<f64> = parts
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::format(path, line_no, "unparseable vector component"))?;
        if values.len() != d {
            return Err(Error::format(
                path,
                line_no,
                format!("expected {d} values, found {}", values.len()),
            ));
        }
        if let Some(idx) = vocab.get(token) {
            table.table.row_mut(idx).copy_from_slice(&values);
            found[idx] = true;
        }
    }
    if seen != count {
        return Err(Error::format(
            path,
            1,
            format!("header announces {count} vectors, file has {seen}"),
        ));
    }

    let coverage = if vocab.is_empty() {
        1.0
    } else {
        found.iter().filter(|&&f| f).count() as f64 / vocab.len() as f64
    };
    Ok((table, coverage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::seeded;
    use std::io::Write;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        let docs: Vec<Vec<String>> = vec![tokens.iter().map(|t| t.to_string()).collect()];
        Vocabulary::build(&docs, 1).unwrap()
    }

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn full_coverage_copies_rows() {
        let v = vocab(&["bad", "good"]);
        let f = file("2 3\nbad 1 2 3\ngood -1 0.5 0\n");
        let (e, coverage) = load_embeddings(f.path(), &v, 3, &mut seeded(0)).unwrap();
        assert_eq!(coverage, 1.0);
        assert_eq!(e.table.row(v.id("bad")), &[1.0, 2.0, 3.0]);
        assert_eq!(e.table.row(v.id("good")), &[-1.0, 0.5, 0.0]);
        assert_eq!(e.rows(), 3);
    }

    #[test]
    fn missing_token_keeps_random_row() {
        let v = vocab(&["bad", "zzz"]);
        let f = file("1 2\nbad 1 2\n");
        let (e, coverage) = load_embeddings(f.path(), &v, 2, &mut seeded(0)).unwrap();
        assert_eq!(coverage, 0.5);
        let limit = glorot_limit(1, 2);
        assert!(e.table.row(v.id("zzz")).iter().all(|x| x.abs() <= limit));
        assert!(e.table.row(v.oov_index()).iter().all(|x| x.abs() <= limit));
    }

    #[test]
    fn malformed_inputs() {
        let v = vocab(&["a"]);
        let f = file("2 3\na 1 2 3\nb 1 2 3 4\n");
        let err = load_embeddings(f.path(), &v, 3, &mut seeded(0))
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3"), "{err}");
        let f = file("1 4\na 1 2 3 4\n");
        let err = load_embeddings(f.path(), &v, 3, &mut seeded(0))
            .unwrap_err()
            .to_string();
        assert!(err.contains("dimension mismatch"), "{err}");
        let f = file("1 2\na 1 x\n");
        assert!(load_embeddings(f.path(), &v, 2, &mut seeded(0)).is_err());
    }
}
