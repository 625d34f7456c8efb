//! Named parameters with gradient buffers, and a visitor trait the
//! optimizer, checkpointing, and the finite-difference harness share.

use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    value: Mat,
    grad: Mat,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Mat) -> Self {
        let grad = Mat::zeros(value.rows(), value.cols());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Mat {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Mat {
        &mut self.value
    }

    pub fn grad(&self) -> &Mat {
        &self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn accumulate_grad(&mut self, g: &Mat) -> Result<()> {
        self.grad.add_assign(g).map_err(|_| {
            Error::shape_in(
                format!("gradient for '{}'", self.name),
                format!("{:?}", self.value.shape()),
                format!("{:?}", g.shape()),
            )
        })
    }
}

/// Deterministic-order traversal of every parameter in a module tree.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));
}

pub fn param_names(model: &impl Parameterized) -> Vec<String> {
    let mut names = Vec::new();
    model.visit_params(&mut |p| names.push(p.name().to_string()));
    names
}

/// Total scalar count across all parameters.
pub fn param_count(model: &impl Parameterized) -> usize {
    let mut n = 0;
    model.visit_params(&mut |p| n += p.value().len());
    n
}

pub fn zero_grads(model: &mut impl Parameterized) {
    model.visit_params_mut(&mut |p| p.zero_grad());
}
