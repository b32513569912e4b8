use crate::error::{Error, Result};
use crate::gradcore::{
    add_outer, glorot_init, matvec, matvec_transpose_acc, sigmoid_scalar, Param, Rng, Tensor,
};

/// Gate weights of one GRU cell. The initial state `h_0` is the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_h: Param,
    pub w_z: Param,
    pub w_r: Param,
    pub u_h: Param,
    pub u_z: Param,
    pub u_r: Param,
    pub b_h: Param,
    pub b_z: Param,
    pub b_r: Param,
}

/// Everything one step computed; kept for backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct GruStep {
    pub h_prev: Vec<f64>,
    pub reset: Vec<f64>,
    pub update: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruParams {
    pub fn zeros(d: usize, m: usize) -> Self {
        Self {
            w_h: Param::zeros("gru.w_h", &[m, d]),
            w_z: Param::zeros("gru.w_z", &[m, d]),
            w_r: Param::zeros("gru.w_r", &[m, d]),
            u_h: Param::zeros("gru.u_h", &[m, m]),
            u_z: Param::zeros("gru.u_z", &[m, m]),
            u_r: Param::zeros("gru.u_r", &[m, m]),
            b_h: Param::zeros("gru.b_h", &[m]),
            b_z: Param::zeros("gru.b_z", &[m]),
            b_r: Param::zeros("gru.b_r", &[m]),
        }
    }

    /// Glorot weights, zero biases.
    pub fn init(d: usize, m: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(d, m);
        p.w_h.value = glorot_init(d, m, rng);
        p.w_z.value = glorot_init(d, m, rng);
        p.w_r.value = glorot_init(d, m, rng);
        p.u_h.value = glorot_init(m, m, rng);
        p.u_z.value = glorot_init(m, m, rng);
        p.u_r.value = glorot_init(m, m, rng);
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_h.value.rows()
    }

    pub fn input(&self) -> usize {
        self.w_h.value.cols()
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![
            &self.w_h, &self.w_z, &self.w_r, &self.u_h, &self.u_z, &self.u_r, &self.b_h, &self.b_z,
            &self.b_r,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.w_h,
            &mut self.w_z,
            &mut self.w_r,
            &mut self.u_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.b_h,
            &mut self.b_z,
            &mut self.b_r,
        ]
    }

    /// Backpropagates through the whole chain. `dh[t]` holds the gradient
    /// arriving at `h_t` from outside the recurrence; input gradients are
    /// added to `dx[t]`.
    pub(crate) fn backward(
        &mut self,
        xs: &[&[f64]],
        steps: &[GruStep],
        dh: &[Vec<f64>],
        dx: &mut [Vec<f64>],
    ) {
        let m = self.hidden();
        let mut carry = vec![0.0; m];
        let mut dpre_h = vec![0.0; m];
        let mut dpre_z = vec![0.0; m];
        let mut dpre_r = vec![0.0; m];
        let mut d_rh = vec![0.0; m];
        let mut rh = vec![0.0; m];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            let x = xs[t];
            let mut dh_prev = vec![0.0; m];
            for i in 0..m {
                let g = dh[t][i] + carry[i];
                let dz = g * (s.candidate[i] - s.h_prev[i]);
                let dcand = g * s.update[i];
                dh_prev[i] = g * (1.0 - s.update[i]);
                dpre_h[i] = dcand * (1.0 - s.candidate[i] * s.candidate[i]);
                dpre_z[i] = dz * s.update[i] * (1.0 - s.update[i]);
                rh[i] = s.reset[i] * s.h_prev[i];
            }

            add_outer(&mut self.w_h.grad, &dpre_h, x);
            add_outer(&mut self.u_h.grad, &dpre_h, &rh);
            add_in_place(self.b_h.grad.data_mut(), &dpre_h);
            matvec_transpose_acc(&self.w_h.value, &dpre_h, &mut dx[t]);
            d_rh.iter_mut().for_each(|v| *v = 0.0);
            matvec_transpose_acc(&self.u_h.value, &dpre_h, &mut d_rh);
            for i in 0..m {
                let dr = d_rh[i] * s.h_prev[i];
                dh_prev[i] += d_rh[i] * s.reset[i];
                dpre_r[i] = dr * s.reset[i] * (1.0 - s.reset[i]);
            }

            add_outer(&mut self.w_z.grad, &dpre_z, x);
            add_outer(&mut self.u_z.grad, &dpre_z, &s.h_prev);
            add_in_place(self.b_z.grad.data_mut(), &dpre_z);
            matvec_transpose_acc(&self.w_z.value, &dpre_z, &mut dx[t]);
            matvec_transpose_acc(&self.u_z.value, &dpre_z, &mut dh_prev);

            add_outer(&mut self.w_r.grad, &dpre_r, x);
            add_outer(&mut self.u_r.grad, &dpre_r, &s.h_prev);
            add_in_place(self.b_r.grad.data_mut(), &dpre_r);
            matvec_transpose_acc(&self.w_r.value, &dpre_r, &mut dx[t]);
            matvec_transpose_acc(&self.u_r.value, &dpre_r, &mut dh_prev);

            carry = dh_prev;
        }
    }
}

pub(crate) fn add_in_place(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// One GRU transition from `h_prev` given input `x`.
pub fn gru_step(x: &[f64], h_prev: &[f64], params: &GruParams) -> Result<GruStep> {
    let (d, m) = (params.input(), params.hidden());
    if x.len() != d || h_prev.len() != m {
        return Err(Error::Shape(format!(
            "gru_step expects x of width {d} and h of width {m}, got {} and {}",
            x.len(),
            h_prev.len()
        )));
    }
    Ok(step_unchecked(x, h_prev, params))
}

fn step_unchecked(x: &[f64], h_prev: &[f64], p: &GruParams) -> GruStep {
    let m = p.hidden();
    let mut tmp = vec![0.0; m];
    let mut gate = |w: &Tensor, u: &Tensor, b: &Tensor, h: &[f64]| -> Vec<f64> {
        let mut pre = vec![0.0; m];
        matvec(w, x, &mut pre);
        matvec(u, h, &mut tmp);
        for ((o, t), bias) in pre.iter_mut().zip(&tmp).zip(b.data()) {
            *o += t + bias;
        }
        pre
    };
    let reset: Vec<f64> = gate(&p.w_r.value, &p.u_r.value, &p.b_r.value, h_prev)
        .into_iter()
        .map(sigmoid_scalar)
        .collect();
    let update: Vec<f64> = gate(&p.w_z.value, &p.u_z.value, &p.b_z.value, h_prev)
        .into_iter()
        .map(sigmoid_scalar)
        .collect();
    let rh: Vec<f64> = reset.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    let candidate: Vec<f64> = gate(&p.w_h.value, &p.u_h.value, &p.b_h.value, &rh)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let h = (0..m)
        .map(|i| (1.0 - update[i]) * h_prev[i] + update[i] * candidate[i])
        .collect();
    GruStep {
        h_prev: h_prev.to_vec(),
        reset,
        update,
        candidate,
        h,
    }
}

/// Runs the chain left to right from the zero state over the embedding rows
/// of `tokens`.
pub fn gru_forward(
    tokens: &[usize],
    embeddings: &Tensor,
    params: &GruParams,
) -> Result<Vec<GruStep>> {
    if embeddings.cols() != params.input() {
        return Err(Error::Shape(format!(
            "embedding width {} does not match GRU input width {}",
            embeddings.cols(),
            params.input()
        )));
    }
    if let Some(bad) = tokens.iter().find(|&&t| t >= embeddings.rows()) {
        return Err(Error::InvalidArgument(format!(
            "token id {bad} outside the embedding table"
        )));
    }
    let xs: Vec<&[f64]> = tokens.iter().map(|&t| embeddings.row(t)).collect();
    Ok(run_chain(&xs, params))
}

pub(crate) fn run_chain(xs: &[&[f64]], params: &GruParams) -> Vec<GruStep> {
    let mut h = vec![0.0; params.hidden()];
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        let s = step_unchecked(x, &h, params);
        h.clone_from(&s.h);
        steps.push(s);
    }
    steps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::seeded;

    fn scalar_ones() -> GruParams {
        let mut p = GruParams::zeros(1, 1);
        for w in [
            &mut p.w_h, &mut p.w_z, &mut p.w_r, &mut p.u_h, &mut p.u_z, &mut p.u_r,
        ] {
            w.value.fill(1.0);
        }
        p
    }

    #[test]
    fn zero_fixed_point() {
        let p = GruParams::init(3, 4, &mut seeded(1));
        let s = gru_step(&[0.0; 3], &[0.0; 4], &p).unwrap();
        assert!(s.h.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn closed_update_gate_copies_state() {
        let mut p = GruParams::init(3, 4, &mut seeded(2));
        p.w_z.value.fill(0.0);
        p.u_z.value.fill(0.0);
        p.b_z.value.fill(-1e6);
        let h_prev = [0.3, -0.2, 0.9, -0.99];
        let s = gru_step(&[1.0, -2.0, 0.5], &h_prev, &p).unwrap();
        assert_eq!(s.h, h_prev);
    }

    #[test]
    fn scalar_hand_evaluation() {
        let s = gru_step(&[1.0], &[0.0], &scalar_ones()).unwrap();
        assert!((s.reset[0] - 0.7311).abs() < 1e-4);
        assert!((s.update[0] - 0.7311).abs() < 1e-4);
        assert!((s.candidate[0] - 0.7616).abs() < 1e-4);
        assert!((s.h[0] - 0.5568).abs() < 1e-4);
    }

    #[test]
    fn shape_mismatch() {
        assert!(gru_step(&[1.0, 2.0], &[0.0], &scalar_ones()).is_err());
    }

    #[test]
    fn chain_properties() {
        let mut rng = seeded(3);
        let p = GruParams::init(4, 5, &mut rng);
        let emb = glorot_init(4, 6, &mut rng);
        assert!(gru_forward(&[], &emb, &p).unwrap().is_empty());

        let one = gru_forward(&[2], &emb, &p).unwrap();
        assert_eq!(one[0], gru_step(emb.row(2), &[0.0; 5], &p).unwrap());

        let plain = gru_forward(&[1, 2, 3], &emb, &p).unwrap();
        let prefixed = gru_forward(&[4, 1, 2, 3], &emb, &p).unwrap();
        assert_ne!(plain[2].h, prefixed[3].h);
        assert!(plain.iter().all(|s| s.h.iter().all(|v| v.abs() < 1.0)));
        assert!(gru_forward(&[6], &emb, &p).is_err());
    }
}
