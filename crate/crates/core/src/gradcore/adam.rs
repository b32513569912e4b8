use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Param;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clipping threshold applied before the update.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid Adam config {self:?}"
            )))
        }
    }
}

/// One bias-corrected Adam step over `params`, then zeroes their gradients.
///
/// Entries whose gradient is exactly zero keep their value and moments, so a
/// step with all-zero gradients leaves every value untouched. This is the
/// usual lazy treatment of sparse embedding rows.
pub fn adam_step(params: &mut [&mut Param], cfg: &AdamConfig) -> Result<()> {
    for p in params.iter() {
        if !p.grad.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    let scale = match cfg.clip_norm {
        Some(limit) => {
            let norm = params
                .iter()
                .map(|p| p.grad.squared_norm())
                .sum::<f64>()
                .sqrt();
            if norm > limit {
                limit / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    for p in params.iter_mut() {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        let Param {
            value,
            grad,
            adam_m,
            adam_v,
            ..
        } = &mut **p;
        let entries = value.data_mut().iter_mut().zip(grad.data()).zip(
            adam_m
                .data_mut()
                .iter_mut()
                .zip(adam_v.data_mut().iter_mut()),
        );
        for ((w, &g), (m, v)) in entries {
            if g == 0.0 {
                continue;
            }
            let g = g * scale;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        p.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::Tensor;

    fn scalar_param(value: f64, grad: f64) -> Param {
        let mut p = Param::new("w", Tensor::scalar(value));
        p.grad.data_mut()[0] = grad;
        p
    }

    #[test]
    fn zero_gradients_are_identity() {
        let mut p = scalar_param(0.7, 0.3);
        let cfg = AdamConfig::default();
        adam_step(&mut [&mut p], &cfg).unwrap();
        let before = p.value.clone();
        for _ in 0..5 {
            adam_step(&mut [&mut p], &cfg).unwrap();
        }
        assert_eq!(p.value, before);
        assert_eq!(p.step_count, 6);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_param(1.0, 1.0);
        let cfg = AdamConfig {
            clip_norm: None,
            ..AdamConfig::default()
        };
        adam_step(&mut [&mut p], &cfg).unwrap();
        let delta = 1.0 - p.value.data()[0];
        assert!((delta - 0.001).abs() < 1e-9, "delta {delta}");
        assert_eq!(p.grad.data()[0], 0.0);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn clipping_scales_gradients() {
        // Grad norm 10 clipped to 1: the stored first moment sees 0.1 * g.
        let mut a = scalar_param(0.0, 6.0);
        let mut b = scalar_param(0.0, 8.0);
        let cfg = AdamConfig {
            clip_norm: Some(1.0),
            ..AdamConfig::default()
        };
        adam_step(&mut [&mut a, &mut b], &cfg).unwrap();
        assert!((a.adam_m.data()[0] - 0.1 * 0.6).abs() < 1e-15);
        assert!((b.adam_m.data()[0] - 0.1 * 0.8).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_param(0.0, 0.0);
        p.grad.data_mut()[0] = f64::INFINITY;
        p.name = "head.w_p".into();
        let err = adam_step(&mut [&mut p], &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("head.w_p"));
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
