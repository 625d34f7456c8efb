//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::nn::param::Parameterized;

/// Compares the analytic gradients currently stored in the model's
/// parameters against central differences of `loss_fn`, coordinate by
/// coordinate, and returns the maximum relative error
/// |a - n| / max(|a|, |n|, 1e-8).
///
/// The caller runs forward + backward first so `Parameter::grad` holds the
/// analytic gradient; `loss_fn` must recompute the same deterministic loss
/// from scratch on every call.
pub fn finite_difference_check<M: Parameterized>(
    model: &mut M,
    loss_fn: &mut dyn FnMut(&mut M) -> Result<f64>,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }

    let mut analytic: Vec<Vec<f64>> = Vec::new();
    model.visit_params(&mut |p| analytic.push(p.grad().data().to_vec()));

    let mut max_rel = 0.0f64;
    for (p_idx, grads) in analytic.iter().enumerate() {
        for (c_idx, &a) in grads.iter().enumerate() {
            add_at(model, p_idx, c_idx, step);
            let loss_plus = loss_fn(model)?;
            add_at(model, p_idx, c_idx, -2.0 * step);
            let loss_minus = loss_fn(model)?;
            add_at(model, p_idx, c_idx, step);
            if !loss_plus.is_finite() || !loss_minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss during finite-difference check at parameter {p_idx} coordinate {c_idx}"
                )));
            }
            let numeric = (loss_plus - loss_minus) / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn add_at<M: Parameterized>(model: &mut M, p_idx: usize, c_idx: usize, delta: f64) {
    let mut i = 0;
    model.visit_params_mut(&mut |p| {
        if i == p_idx {
            p.value_mut().data_mut()[c_idx] += delta;
        }
        i += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::nn::param::Parameter;

    struct Quadratic {
        w: Parameter,
    }

    impl Parameterized for Quadratic {
        fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
            f(&self.w);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
            f(&mut self.w);
        }
    }

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let w = Mat::from_vec(1, 4, vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let mut model = Quadratic {
            w: Parameter::new("w", w),
        };
        // loss = w . w, gradient = 2w.
        let grad = model.w.value().scale(2.0);
        model.w.accumulate_grad(&grad).unwrap();
        let err = finite_difference_check(
            &mut model,
            &mut |m: &mut Quadratic| Ok(m.w.value().data().iter().map(|&v| v * v).sum()),
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let mut model = Quadratic {
            w: Parameter::new("w", Mat::zeros(1, 1)),
        };
        assert!(finite_difference_check(&mut model, &mut |_| Ok(0.0), 0.0).is_err());
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut model = Quadratic {
            w: Parameter::new("w", Mat::from_vec(1, 1, vec![1.0]).unwrap()),
        };
        let err =
            finite_difference_check(&mut model, &mut |_| Ok(f64::NAN), 1e-3).unwrap_err();
        assert!(err.to_string().contains("finite"), "{err}");
    }
}
