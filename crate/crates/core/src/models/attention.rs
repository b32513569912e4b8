use super::gru::add_in_place;
use crate::error::{Error, Result};
use crate::gradcore::{
    add_outer, glorot_init, matvec, matvec_transpose_acc, softmax_backward, softmax_stable, Param,
    Rng,
};

/// Per-position scoring MLP: `l - 1` ReLU layers of width `r`, then an
/// affine scalar layer. Scores are softmax-normalized across positions.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `weights[0]` is `r × input`, middle layers `r × r`, the last `1 × r`.
    pub weights: Vec<Param>,
    pub biases: Vec<Param>,
}

/// Activations of one attention pass over a comment.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    /// `hidden[t][j]`: post-ReLU output of layer `j + 1` at position `t`.
    pub hidden: Vec<Vec<Vec<f64>>>,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(input: usize, r: usize, l: usize) -> Result<Self> {
        if l < 2 {
            return Err(Error::InvalidArgument(format!(
                "attention needs l >= 2, got {l}"
            )));
        }
        let mut weights = Vec::with_capacity(l);
        let mut biases = Vec::with_capacity(l);
        for j in 0..l {
            let fan_in = if j == 0 { input } else { r };
            let fan_out = if j == l - 1 { 1 } else { r };
            weights.push(Param::zeros(format!("att.w{}", j + 1), &[fan_out, fan_in]));
            biases.push(Param::zeros(format!("att.b{}", j + 1), &[fan_out]));
        }
        Ok(Self { weights, biases })
    }

    pub fn init(input: usize, r: usize, l: usize, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(input, r, l)?;
        for w in &mut p.weights {
            let (rows, cols) = (w.value.rows(), w.value.cols());
            w.value = glorot_init(cols, rows, rng);
        }
        Ok(p)
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input(&self) -> usize {
        self.weights[0].value.cols()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub(crate) fn forward(&self, inputs: &[&[f64]]) -> Result<AttentionTrace> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument(
                "attention over an empty sequence is undefined".into(),
            ));
        }
        if let Some(bad) = inputs.iter().find(|u| u.len() != self.input()) {
            return Err(Error::Shape(format!(
                "attention input width {} does not match {}",
                bad.len(),
                self.input()
            )));
        }
        let l = self.layers();
        let mut hidden = Vec::with_capacity(inputs.len());
        let mut scores = Vec::with_capacity(inputs.len());
        for u in inputs {
            let mut acts: Vec<Vec<f64>> = Vec::with_capacity(l - 1);
            for j in 0..l - 1 {
                let w = &self.weights[j].value;
                let mut out = vec![0.0; w.rows()];
                let prev: &[f64] = if j == 0 { u } else { &acts[j - 1] };
                matvec(w, prev, &mut out);
                for (o, b) in out.iter_mut().zip(self.biases[j].value.data()) {
                    *o = (*o + b).max(0.0);
                }
                acts.push(out);
            }
            let mut s = [0.0];
            matvec(&self.weights[l - 1].value, &acts[l - 2], &mut s);
            scores.push(s[0] + self.biases[l - 1].value.data()[0]);
            hidden.push(acts);
        }
        let weights = softmax_stable(&scores)?;
        Ok(AttentionTrace {
            hidden,
            scores,
            weights,
        })
    }

    /// Given `d_weights[t] = ∂L/∂a_t`, accumulates parameter gradients and
    /// adds `∂L/∂input_t` into `d_inputs[t]`.
    pub(crate) fn backward(
        &mut self,
        inputs: &[&[f64]],
        trace: &AttentionTrace,
        d_weights: &[f64],
        d_inputs: &mut [Vec<f64>],
    ) {
        let l = self.layers();
        let d_scores = softmax_backward(&trace.weights, d_weights);
        for (t, &ds) in d_scores.iter().enumerate() {
            let acts = &trace.hidden[t];
            add_outer(&mut self.weights[l - 1].grad, &[ds], &acts[l - 2]);
            self.biases[l - 1].grad.data_mut()[0] += ds;
            let mut delta = vec![0.0; acts[l - 2].len()];
            matvec_transpose_acc(&self.weights[l - 1].value, &[ds], &mut delta);
            for j in (0..l - 1).rev() {
                for (d, a) in delta.iter_mut().zip(&acts[j]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                let prev: &[f64] = if j == 0 { inputs[t] } else { &acts[j - 1] };
                add_outer(&mut self.weights[j].grad, &delta, prev);
                add_in_place(self.biases[j].grad.data_mut(), &delta);
                let mut below = vec![0.0; prev.len()];
                matvec_transpose_acc(&self.weights[j].value, &delta, &mut below);
                if j == 0 {
                    add_in_place(&mut d_inputs[t], &below);
                } else {
                    delta = below;
                }
            }
        }
    }
}

/// Attention weights `a_1..a_k` for the given per-position inputs.
pub fn attention_weights(inputs: &[&[f64]], params: &AttentionParams) -> Result<Vec<f64>> {
    Ok(params.forward(inputs)?.weights)
}
