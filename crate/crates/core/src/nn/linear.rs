//! Affine layer with exact analytic gradients.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::param::{Parameter, Parameterized};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,       // d_in x d_out
    pub bias: Option<Parameter>, // 1 x d_out; attention projections go without
}

#[derive(Debug)]
pub struct LinearCache {
    input: Mat,
}

impl Linear {
    pub fn new(name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha20Rng) -> Self {
        let mut lin = Linear::new_unbiased(name, d_in, d_out, rng);
        lin.bias = Some(Parameter::new(format!("{name}.bias"), Mat::zeros(1, d_out)));
        lin
    }

    /// Pure projection, as in the attention equations.
    pub fn new_unbiased(name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha20Rng) -> Self {
        let scale = 1.0 / (d_in as f64).sqrt();
        let weight = Mat::from_fn(d_in, d_out, |_, _| {
            let v: f64 = rng.sample(StandardNormal);
            v * scale
        });
        Linear {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.value().rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.value().cols()
    }

    /// y = x W (+ b)
    pub fn forward(&self, x: &Mat) -> Result<(Mat, LinearCache)> {
        if x.cols() != self.d_in() {
            return Err(Error::shape_in(
                format!("linear '{}'", self.weight.name()),
                format!("input with {} cols", self.d_in()),
                format!("{}x{}", x.rows(), x.cols()),
            ));
        }
        let mut y = x.matmul(self.weight.value())?;
        if let Some(bias) = &self.bias {
            let bias = bias.value().row(0);
            for r in 0..y.rows() {
                for (v, &b) in y.row_mut(r).iter_mut().zip(bias.iter()) {
                    *v += b;
                }
            }
        }
        Ok((y, LinearCache { input: x.clone() }))
    }

    /// Accumulates dW = x^T dy (and db = colsum(dy)); returns dx = dy W^T.
    pub fn backward(&mut self, cache: &LinearCache, dy: &Mat) -> Result<Mat> {
        let dw = cache.input.matmul_tn(dy)?;
        self.weight.accumulate_grad(&dw)?;
        if let Some(bias) = &mut self.bias {
            let db = Mat::from_vec(1, dy.cols(), dy.col_sums())?;
            bias.accumulate_grad(&db)?;
        }
        dy.matmul_nt(self.weight.value())
    }
}

impl Parameterized for Linear {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        if let Some(bias) = &self.bias {
            f(bias);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        if let Some(bias) = &mut self.bias {
            f(bias);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_difference_check;
    use crate::nn::param::zero_grads;
    use rand::SeedableRng;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut lin = Linear::new("t", 3, 3, &mut rng);
        *lin.weight.value_mut() = Mat::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        let x = Mat::from_rows(&[vec![0.5, -1.0, 2.0], vec![3.0, 0.0, -0.25]]).unwrap();
        let (y, _) = lin.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_computed_affine() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut lin = Linear::new("t", 2, 2, &mut rng);
        *lin.weight.value_mut() = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        *lin.bias.as_mut().unwrap().value_mut() = Mat::from_vec(1, 2, vec![1.0, -1.0]).unwrap();
        let x = Mat::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (y, _) = lin.forward(&x).unwrap();
        assert_eq!(y.row(0), &[2.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let lin = Linear::new("t", 4, 2, &mut rng);
        let err = lin.forward(&Mat::zeros(3, 5)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('4') && msg.contains("3x5"), "{msg}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut lin = Linear::new("t", 4, 3, &mut rng);
        let x = Mat::from_fn(3, 4, |r, c| ((r * 4 + c) as f64 * 0.37).sin());
        // Fixed mixing so the scalar loss depends on every output.
        let mix = Mat::from_fn(3, 3, |r, c| ((r + 2 * c) as f64 * 0.21).cos());

        zero_grads(&mut lin);
        let (y, cache) = lin.forward(&x).unwrap();
        let _ = y;
        lin.backward(&cache, &mix).unwrap();

        let max_err = finite_difference_check(
            &mut lin,
            &mut |m: &mut Linear| {
                let (y, _) = m.forward(&x)?;
                Ok(y.hadamard(&mix)?.data().iter().sum())
            },
            1e-3,
        )
        .unwrap();
        assert!(max_err < 1e-4, "max relative error {max_err}");
    }
}
