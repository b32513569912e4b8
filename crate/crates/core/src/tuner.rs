//! Threshold selection for semi-automatic moderation.
//!
//! Moderators pick a coverage (the share of comments decided
//! automatically). For every candidate acceptance threshold `t_a` the sweep
//! picks the rejection threshold `t_r` whose gray zone `[t_a, t_r]` holds
//! `round((1 - coverage) · N)` development comments, or the closest count
//! the candidate grid can reach, and keeps the pair with the best
//! time-batched macro F_β.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{f_beta, precisions, time_order, Scored, ScoredSet};
use crate::models::is_reject;

pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_BATCH_SIZE: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub t_a: f64,
    pub t_r: f64,
    pub coverage: f64,
    pub beta: f64,
    pub dev_macro_f_beta: f64,
    /// Unix seconds; stamped by the caller.
    pub tuned_at: i64,
}

impl Thresholds {
    /// Fully automatic split at one cut point.
    pub fn fixed(cut: f64) -> Self {
        Self {
            t_a: cut,
            t_r: cut,
            coverage: 1.0,
            beta: DEFAULT_BETA,
            dev_macro_f_beta: 0.0,
            tuned_at: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Gray,
    Reject,
}

pub fn decide(p: f64, th: &Thresholds) -> Decision {
    if p > th.t_r {
        Decision::Reject
    } else if p < th.t_a {
        Decision::Accept
    } else {
        Decision::Gray
    }
}

/// `0.0`, `1.0`, and the midpoints between consecutive distinct scores, ascending.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut out = Vec::with_capacity(distinct.len() + 1);
    out.push(0.0);
    out.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.push(1.0);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

pub fn target_gray(coverage: f64, n: usize) -> usize {
    ((1.0 - coverage) * n as f64).round() as usize
}

pub fn gray_count(items: &[Scored], t_a: f64, t_r: f64) -> usize {
    items.iter().filter(|s| t_a <= s.p && s.p <= t_r).count()
}

fn validate(dev: &ScoredSet, coverage: f64, beta: f64, batch_size: usize) -> Result<()> {
    if dev.is_empty() {
        return Err(Error::InvalidArgument(
            "threshold tuning needs a non-empty development set".into(),
        ));
    }
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "coverage must lie in (0, 1], got {coverage}"
        )));
    }
    if beta.is_nan() || beta <= 0.0 || batch_size == 0 {
        return Err(Error::InvalidArgument(
            "beta must be positive and batch_size at least 1".into(),
        ));
    }
    Ok(())
}

/// Selects `(t_a, t_r)` maximizing macro F_β at the requested coverage.
/// Ties go to the smaller `t_a`, then the smaller `t_r`.
pub fn tune(dev: &ScoredSet, coverage: f64, beta: f64, batch_size: usize) -> Result<Thresholds> {
    validate(dev, coverage, beta, batch_size)?;
    let n = dev.len();
    let target = target_gray(coverage, n);
    let candidates = candidate_thresholds(&dev.scores());
    let mut sorted = dev.scores();
    sorted.sort_by(f64::total_cmp);
    let count =
        |a: f64, b: f64| sorted.partition_point(|&p| p <= b) - sorted.partition_point(|&p| p < a);

    // Per t_a: the smallest t_r whose gray count is closest to the target.
    let mut pairs: Vec<(usize, usize, usize)> = Vec::with_capacity(candidates.len());
    for i in 0..candidates.len() {
        let t_a = candidates[i];
        let rest = &candidates[i..];
        let first_at_least = rest.partition_point(|&t_r| count(t_a, t_r) < target);
        let mut best: Option<(usize, usize)> = None;
        for j in [first_at_least.checked_sub(1), Some(first_at_least)]
            .into_iter()
            .flatten()
        {
            if j >= rest.len() {
                continue;
            }
            let dist = count(t_a, rest[j]).abs_diff(target);
            if best.is_none_or(|(_, d)| dist < d) {
                best = Some((j, dist));
            }
        }
        if let Some((j, dist)) = best {
            pairs.push((i, i + j, dist));
        }
    }
    let closest = pairs
        .iter()
        .map(|p| p.2)
        .min()
        .expect("candidate grid is never empty");

    let order = time_order(&dev.items);
    let timeline: Vec<Scored> = order.into_iter().map(|i| dev.items[i].clone()).collect();
    let mut best: Option<(f64, usize, usize)> = None;
    for &(i, j, dist) in &pairs {
        if dist != closest {
            continue;
        }
        let score = batched_f_beta(&timeline, candidates[i], candidates[j], beta, batch_size);
        if best.is_none_or(|(s, _, _)| score > s) {
            best = Some((score, i, j));
        }
    }
    let (score, i, j) = best.expect("at least one pair reaches the closest count");
    Ok(Thresholds {
        t_a: candidates[i],
        t_r: candidates[j],
        coverage,
        beta,
        dev_macro_f_beta: score,
        tuned_at: 0,
    })
}

fn batched_f_beta(timeline: &[Scored], t_a: f64, t_r: f64, beta: f64, batch_size: usize) -> f64 {
    let mut total = 0.0;
    let mut batches = 0usize;
    for batch in timeline.chunks(batch_size) {
        let pr = precisions(batch, t_a, t_r);
        total += f_beta(pr.p_reject, pr.p_accept, beta);
        batches += 1;
    }
    total / batches as f64
}

/// Brute-force reference for [`tune`]: enumerates every candidate pair,
/// counting gray items and recomputing macro F_β from scratch for each.
/// Quadratic in the candidate count; meant for verification on small sets.
pub fn tune_exhaustive(
    dev: &ScoredSet,
    coverage: f64,
    beta: f64,
    batch_size: usize,
) -> Result<Thresholds> {
    validate(dev, coverage, beta, batch_size)?;
    let target = target_gray(coverage, dev.len()) as i64;
    let candidates = candidate_thresholds(&dev.scores());
    let mut grid = Vec::new();
    for (i, &t_a) in candidates.iter().enumerate() {
        for &t_r in &candidates[i..] {
            let gray = gray_count(&dev.items, t_a, t_r) as i64;
            grid.push((t_a, t_r, (gray - target).abs()));
        }
    }
    let closest = grid.iter().map(|g| g.2).min().unwrap_or(0);

    let mut timeline = dev.items.clone();
    timeline.sort_by(|a, b| a.ts.cmp(&b.ts).then_with(|| a.id.cmp(&b.id)));
    let mut best: Option<(f64, f64, f64)> = None;
    let mut last_t_a = None;
    for &(t_a, t_r, dist) in &grid {
        // Only the smallest qualifying t_r per t_a competes.
        if dist != closest || last_t_a == Some(t_a) {
            continue;
        }
        last_t_a = Some(t_a);
        let mut sum = 0.0;
        let mut batches = 0;
        for batch in timeline.chunks(batch_size) {
            let (mut acc, mut acc_ok, mut rej, mut rej_ok) = (0usize, 0usize, 0usize, 0usize);
            for s in batch {
                if s.p > t_r {
                    rej += 1;
                    if is_reject(s.gold) {
                        rej_ok += 1;
                    }
                } else if s.p < t_a {
                    acc += 1;
                    if !is_reject(s.gold) {
                        acc_ok += 1;
                    }
                }
            }
            let p_a = if acc == 0 {
                1.0
            } else {
                acc_ok as f64 / acc as f64
            };
            let p_r = if rej == 0 {
                1.0
            } else {
                rej_ok as f64 / rej as f64
            };
            sum += f_beta(p_r, p_a, beta);
            batches += 1;
        }
        let score = sum / batches as f64;
        if best.is_none_or(|b| score > b.0) {
            best = Some((score, t_a, t_r));
        }
    }
    let (score, t_a, t_r) = best.expect("grid is never empty");
    Ok(Thresholds {
        t_a,
        t_r,
        coverage,
        beta,
        dev_macro_f_beta: score,
        tuned_at: 0,
    })
}
