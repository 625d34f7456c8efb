//! Layer normalization: per-row zero mean, unit variance (epsilon-guarded),
//! then learned affine.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::param::{Parameter, Parameterized};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Parameter,  // 1 x d
    pub shift: Parameter, // 1 x d
}

#[derive(Debug)]
pub struct LayerNormCache {
    normalized: Mat,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: Parameter::new(format!("{name}.gain"), Mat::from_fn(1, dim, |_, _| 1.0)),
            shift: Parameter::new(format!("{name}.shift"), Mat::zeros(1, dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.value().cols()
    }

    pub fn forward(&self, x: &Mat) -> Result<(Mat, LayerNormCache)> {
        let d = self.dim();
        if x.cols() != d {
            return Err(Error::shape_in(
                format!("layer norm '{}'", self.gain.name()),
                format!("{d} cols"),
                format!("{}x{}", x.rows(), x.cols()),
            ));
        }
        if d < 2 {
            return Err(Error::invalid("layer norm needs at least 2 features"));
        }
        let mut normalized = Mat::zeros(x.rows(), d);
        let mut inv_std = Vec::with_capacity(x.rows());
        let gain = self.gain.value().row(0);
        let shift = self.shift.value().row(0);
        let mut out = Mat::zeros(x.rows(), d);
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(istd);
            for c in 0..d {
                let xhat = (row[c] - mean) * istd;
                normalized.set(r, c, xhat);
                out.set(r, c, gain[c] * xhat + shift[c]);
            }
        }
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Mat) -> Result<Mat> {
        let d = self.dim() as f64;
        let gain = self.gain.value().row(0).to_vec();
        let mut dgain = Mat::zeros(1, self.dim());
        let mut dshift = Mat::zeros(1, self.dim());
        let mut dx = Mat::zeros(dy.rows(), dy.cols());
        for r in 0..dy.rows() {
            let xhat = cache.normalized.row(r);
            let dyr = dy.row(r);
            for c in 0..dy.cols() {
                dgain.row_mut(0)[c] += dyr[c] * xhat[c];
                dshift.row_mut(0)[c] += dyr[c];
            }
            // dxhat = dy * gain; dx = inv_std/d * (d*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for c in 0..dy.cols() {
                let dxhat = dyr[c] * gain[c];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat[c];
            }
            let istd = cache.inv_std[r];
            for c in 0..dy.cols() {
                let dxhat = dyr[c] * gain[c];
                dx.set(
                    r,
                    c,
                    istd / d * (d * dxhat - sum_dxhat - xhat[c] * sum_dxhat_xhat),
                );
            }
        }
        self.gain.accumulate_grad(&dgain)?;
        self.shift.accumulate_grad(&dshift)?;
        Ok(dx)
    }
}

impl Parameterized for LayerNorm {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.gain);
        f(&self.shift);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.gain);
        f(&mut self.shift);
    }
}
