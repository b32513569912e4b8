//! Ranking and decision metrics over scored comments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::is_reject;

/// One scored comment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    /// P(reject).
    pub p: f64,
    /// Gold P(reject), binary or probabilistic.
    pub gold: f64,
    pub ts: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub items: Vec<Scored>,
}

impl ScoredSet {
    pub fn new(items: Vec<Scored>) -> Result<Self> {
        for s in &items {
            if !(0.0..=1.0).contains(&s.p) || !(0.0..=1.0).contains(&s.gold) {
                return Err(Error::InvalidArgument(format!(
                    "scored item {} out of range (p={}, gold={})",
                    s.id, s.p, s.gold
                )));
            }
        }
        Ok(Self { items })
    }

    /// Builds a set from parallel slices; ids are the positions.
    pub fn from_parts(p: &[f64], gold: &[f64], ts: &[i64]) -> Result<Self> {
        if p.len() != gold.len() || p.len() != ts.len() {
            return Err(Error::InvalidArgument(
                "scored sequences differ in length".into(),
            ));
        }
        Self::new(
            p.iter()
                .zip(gold)
                .zip(ts)
                .enumerate()
                .map(|(i, ((&p, &gold), &ts))| Scored {
                    id: format!("{i:08}"),
                    p,
                    gold,
                    ts,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.items.iter().map(|s| s.p).collect()
    }
}

/// Average (mid) ranks, 1-based; ties share the mean of their rank span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties counting one half.
/// Gold labels are binarized: reject iff gold > 0.5.
pub fn auc(scored: &ScoredSet) -> Result<f64> {
    let ranks = average_ranks(&scored.scores());
    let mut positives = 0usize;
    let mut rank_sum = 0.0;
    for (s, r) in scored.items.iter().zip(&ranks) {
        if is_reject(s.gold) {
            positives += 1;
            rank_sum += r;
        }
    }
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Metric(
            "AUC undefined: needs at least one reject and one accept".into(),
        ));
    }
    let np = positives as f64;
    let u = rank_sum - np * (np + 1.0) / 2.0;
    Ok(u / (np * negatives as f64))
}

/// Spearman correlation of system scores with (probabilistic) gold labels.
pub fn spearman(scored: &ScoredSet) -> Result<f64> {
    if scored.len() < 2 {
        return Err(Error::Metric(
            "correlation undefined: needs two or more items".into(),
        ));
    }
    let a = average_ranks(&scored.scores());
    let b = average_ranks(&scored.items.iter().map(|s| s.gold).collect::<Vec<_>>());
    pearson(&a, &b)
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Metric("correlation undefined: zero variance".into()));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Outcome of routing a set through a pair of thresholds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Precisions {
    pub p_accept: f64,
    pub p_reject: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub gray: usize,
    pub correct_accepted: usize,
    pub correct_rejected: usize,
}

impl Precisions {
    /// Precisions from raw counts; an empty denominator yields 1.0.
    pub fn from_counts(
        accepted: usize,
        correct_accepted: usize,
        rejected: usize,
        correct_rejected: usize,
        gray: usize,
    ) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                1.0
            } else {
                num as f64 / den as f64
            }
        };
        Self {
            p_accept: ratio(correct_accepted, accepted),
            p_reject: ratio(correct_rejected, rejected),
            accepted,
            rejected,
            gray,
            correct_accepted,
            correct_rejected,
        }
    }
}

/// Rejects `p > t_r`, accepts `p < t_a`, and leaves the closed interval
/// `[t_a, t_r]` to moderators.
pub fn precisions(items: &[Scored], t_a: f64, t_r: f64) -> Precisions {
    let (mut acc, mut acc_ok, mut rej, mut rej_ok, mut gray) = (0, 0, 0, 0, 0);
    for s in items {
        let truly_reject = is_reject(s.gold);
        if s.p > t_r {
            rej += 1;
            rej_ok += usize::from(truly_reject);
        } else if s.p < t_a {
            acc += 1;
            acc_ok += usize::from(!truly_reject);
        } else {
            gray += 1;
        }
    }
    Precisions::from_counts(acc, acc_ok, rej, rej_ok, gray)
}

/// Weighted harmonic mean `(1+β²)·P_r·P_a / (β²·P_r + P_a)`; 0 when the denominator is 0.
pub fn f_beta(p_reject: f64, p_accept: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * p_reject + p_accept;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p_reject * p_accept / den
    }
}

/// Indices of `items` ordered by timestamp, ties by id.
pub fn time_order(items: &[Scored]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[a]
            .ts
            .cmp(&items[b].ts)
            .then_with(|| items[a].id.cmp(&items[b].id))
    });
    order
}

/// F_β averaged over consecutive time-ordered batches of `batch_size`
/// (the final partial batch included).
pub fn macro_f_beta(
    scored: &ScoredSet,
    t_a: f64,
    t_r: f64,
    beta: f64,
    batch_size: usize,
) -> Result<f64> {
    if scored.is_empty() {
        return Err(Error::Metric("macro F_beta of an empty set".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument(
            "batch_size must be at least 1".into(),
        ));
    }
    let order = time_order(&scored.items);
    let sorted: Vec<Scored> = order.into_iter().map(|i| scored.items[i].clone()).collect();
    let scores: Vec<f64> = sorted
        .chunks(batch_size)
        .map(|batch| {
            let pr = precisions(batch, t_a, t_r);
            f_beta(pr.p_reject, pr.p_accept, beta)
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Summary of a scored evaluation set under one pair of thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub auc: f64,
    pub spearman: Option<f64>,
    pub p_accept: f64,
    pub p_reject: f64,
    pub macro_f_beta: f64,
    pub t_a: f64,
    pub t_r: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub gray: usize,
    /// How probabilistic gold labels were binarized.
    pub label_rule: String,
}

pub fn evaluate(
    scored: &ScoredSet,
    t_a: f64,
    t_r: f64,
    beta: f64,
    batch_size: usize,
) -> Result<EvalReport> {
    let pr = precisions(&scored.items, t_a, t_r);
    Ok(EvalReport {
        n: scored.len(),
        auc: auc(scored)?,
        spearman: spearman(scored).ok(),
        p_accept: pr.p_accept,
        p_reject: pr.p_reject,
        macro_f_beta: macro_f_beta(scored, t_a, t_r, beta, batch_size)?,
        t_a,
        t_r,
        beta,
        batch_size,
        accepted: pr.accepted,
        rejected: pr.rejected,
        gray: pr.gray,
        label_rule: "reject iff gold > 0.5".into(),
    })
}
