use crate::error::{Error, Result};

use super::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

#[inline]
pub fn relu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(relu_scalar)
}

/// Max-shifted softmax.
pub fn softmax_stable(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(
            "softmax of an empty sequence".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(
            "softmax of non-finite scores".into(),
        ));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Given softmax output `a` and upstream gradient `da`, returns `d scores`.
pub fn softmax_backward(a: &[f64], da: &[f64]) -> Vec<f64> {
    let dot: f64 = a.iter().zip(da).map(|(x, g)| x * g).sum();
    a.iter().zip(da).map(|(x, g)| x * (g - dot)).collect()
}

/// Binary cross-entropy against a (possibly soft) target `y`.
pub fn cross_entropy(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`cross_entropy`] with respect to the logit that produced `p`.
/// Zero where the clamp is active.
pub fn cross_entropy_logit_grad(p: f64, y: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        0.0
    } else {
        p - y
    }
}

/// `out = W x` for a `rows × cols` matrix.
#[inline]
pub fn matvec(w: &Tensor, x: &[f64], out: &mut [f64]) {
    let cols = w.cols();
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(w.rows(), out.len());
    for (o, row) in out.iter_mut().zip(w.data().chunks_exact(cols)) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `dx += Wᵀ dy`.
#[inline]
pub fn matvec_transpose_acc(w: &Tensor, dy: &[f64], dx: &mut [f64]) {
    let cols = w.cols();
    debug_assert_eq!(cols, dx.len());
    for (g, row) in dy.iter().zip(w.data().chunks_exact(cols)) {
        if *g == 0.0 {
            continue;
        }
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// `G += dy xᵀ`.
#[inline]
pub fn add_outer(grad: &mut Tensor, dy: &[f64], x: &[f64]) {
    let cols = grad.cols();
    debug_assert_eq!(cols, x.len());
    for (g, row) in dy.iter().zip(grad.data_mut().chunks_exact_mut(cols)) {
        if *g == 0.0 {
            continue;
        }
        for (d, a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}
