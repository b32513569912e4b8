use super::Parameterized;

/// Outcome of a central-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compares analytic gradients with central differences for every entry of
/// every parameter of `model`.
///
/// `loss_and_grad` must zero-or-overwrite and then populate the parameter
/// gradients and return the loss; `loss` evaluates the loss only. The
/// relative error per entry is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn finite_diff_check<M, G, F>(
    model: &mut M,
    mut loss_and_grad: G,
    loss: F,
    epsilon: f64,
) -> GradCheck
where
    M: Parameterized,
    G: FnMut(&mut M) -> f64,
    F: Fn(&M) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    model.zero_grads();
    loss_and_grad(model);
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let original = model.params()[pi].value.data()[j];
            model.params_mut()[pi].value.data_mut()[j] = original + epsilon;
            let plus = loss(model);
            model.params_mut()[pi].value.data_mut()[j] = original - epsilon;
            let minus = loss(model);
            model.params_mut()[pi].value.data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            report.entries_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((model.params()[pi].name.clone(), j));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::{Param, Tensor};

    fn square(p: &Param) -> f64 {
        let t = p.value.data()[0];
        t * t
    }

    #[test]
    fn square_function_passes() {
        let mut p = Param::new("theta", Tensor::scalar(3.0));
        let r = finite_diff_check(
            &mut p,
            |p| {
                let t = p.value.data()[0];
                p.grad.data_mut()[0] = 2.0 * t;
                t * t
            },
            square,
            1e-4,
        );
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.entries_checked, 1);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut p = Param::new("theta", Tensor::scalar(3.0));
        let r = finite_diff_check(&mut p, |_| 1.0, |_| 1.0, 1e-4);
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn doubled_gradient_is_caught() {
        let mut p = Param::new("theta", Tensor::scalar(3.0));
        let r = finite_diff_check(
            &mut p,
            |p| {
                let t = p.value.data()[0];
                p.grad.data_mut()[0] = 4.0 * t;
                t * t
            },
            square,
            1e-4,
        );
        assert!((r.max_rel_error - 1.0 / 3.0).abs() < 1e-6, "{r:?}");
        assert_eq!(r.worst, Some(("theta".to_string(), 0)));
    }
}
