use rand::seq::SliceRandom;
use rand::Rng as _;

use super::Comment;
use crate::error::{Error, Result};
use crate::gradcore::seeded;

pub const BENIGN_LEXICON_SIZE: usize = 2_000;
pub const TRIGGER_LEXICON_SIZE: usize = 50;

const CONSONANTS: [char; 12] = ['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't'];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
const MIN_LEN: usize = 5;
const MAX_LEN: usize = 40;
const BASE_TS: i64 = 1_500_000_000;

fn syllables() -> Vec<String> {
    CONSONANTS
        .iter()
        .flat_map(|c| VOWELS.iter().map(move |v| format!("{c}{v}")))
        .collect()
}

fn benign_lexicon() -> Vec<String> {
    let syl = syllables();
    syl.iter()
        .flat_map(|a| syl.iter().map(move |b| format!("{a}{b}")))
        .take(BENIGN_LEXICON_SIZE)
        .collect()
}

/// The planted reject-only tokens. They contain a `q`, which never occurs in
/// the benign lexicon.
pub fn trigger_lexicon() -> Vec<String> {
    syllables()
        .into_iter()
        .take(TRIGGER_LEXICON_SIZE)
        .map(|s| format!("qx{s}"))
        .collect()
}

/// Deterministic corpus of `n` comments of which `round(n · reject_ratio)`
/// are rejects. Every reject carries at least one trigger token; no accepted
/// comment does.
pub fn gen_synthetic(n: usize, reject_ratio: f64, seed: u64) -> Result<Vec<Comment>> {
    if n == 0 || !(reject_ratio > 0.0 && reject_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gen_synthetic needs n > 0 and 0 < reject_ratio < 1 (got n={n}, ratio={reject_ratio})"
        )));
    }
    let benign = benign_lexicon();
    let triggers = trigger_lexicon();
    let mut rng = seeded(seed);

    let rejects = (n as f64 * reject_ratio).round() as usize;
    let mut labels: Vec<bool> = (0..n).map(|i| i < rejects).collect();
    labels.shuffle(&mut rng);

    let mut ts = BASE_TS;
    let mut out = Vec::with_capacity(n);
    for (i, reject) in labels.into_iter().enumerate() {
        let len = rng.random_range(MIN_LEN..=MAX_LEN);
        let mut words: Vec<&str> = (0..len)
            .map(|_| benign[rng.random_range(0..benign.len())].as_str())
            .collect();
        if reject {
            let planted = rng.random_range(1..=3);
            for _ in 0..planted {
                let pos = rng.random_range(0..len);
                words[pos] = triggers[rng.random_range(0..triggers.len())].as_str();
            }
        }
        ts += rng.random_range(1..=120);
        let gold = if reject { 1.0 } else { 0.0 };
        out.push(Comment::new(
            format!("s{i:06}"),
            words.join(" "),
            Some(gold),
            ts,
        ));
    }
    Ok(out)
}
