//! Smooth rectifier activation (tanh-form gaussian error linear unit) with
//! its exact derivative.

use crate::mat::Mat;

const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const C: f64 = 0.044_715;

#[inline]
pub fn gelu_scalar(v: f64) -> f64 {
    0.5 * v * (1.0 + (K * (v + C * v * v * v)).tanh())
}

#[inline]
pub fn gelu_grad_scalar(v: f64) -> f64 {
    let u = K * (v + C * v * v * v);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * K * (1.0 + 3.0 * C * v * v)
}

pub fn gelu(x: &Mat) -> Mat {
    x.map(gelu_scalar)
}

/// dx given the pre-activation input and upstream gradient.
pub fn gelu_backward(x: &Mat, dy: &Mat) -> Mat {
    debug_assert_eq!(x.shape(), dy.shape());
    let mut out = Mat::zeros(x.rows(), x.cols());
    for (o, (&xv, &dv)) in out
        .data_mut()
        .iter_mut()
        .zip(x.data().iter().zip(dy.data().iter()))
    {
        *o = gelu_grad_scalar(xv) * dv;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps_to_zero_and_large_inputs_are_nearly_linear() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-9);
        assert!(gelu_scalar(-10.0).abs() < 1e-9);
    }

    #[test]
    fn derivative_matches_central_differences() {
        let h = 1e-6;
        for &v in &[-3.0, -1.0, -0.2, 0.0, 0.4, 1.7, 4.0] {
            let numeric = (gelu_scalar(v + h) - gelu_scalar(v - h)) / (2.0 * h);
            let analytic = gelu_grad_scalar(v);
            assert!(
                (numeric - analytic).abs() < 1e-8,
                "at {v}: numeric {numeric} vs analytic {analytic}"
            );
        }
    }
}
