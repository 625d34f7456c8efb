//! AdamW with decoupled weight decay, plus the cosine learning-rate schedule.

use crate::error::{Error, Result};
use crate::nn::Parameterized;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// lr(step) = base * (1 + cos(pi * step / total)) / 2
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    debug_assert!(step <= total_steps);
    if total_steps == 0 {
        return base_lr;
    }
    base_lr * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos()) / 2.0
}

pub struct AdamW {
    weight_decay: f64,
    t: u64,
    // First/second moment buffers aligned with the model's visit order.
    state: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(model: &impl Parameterized, weight_decay: f64) -> Self {
        let mut state = Vec::new();
        model.visit_params(&mut |p| {
            let n = p.value().len();
            state.push((vec![0.0; n], vec![0.0; n]));
        });
        AdamW {
            weight_decay,
            t: 0,
            state,
        }
    }

    /// Decoupled decay first (w *= 1 - lr*wd), then the bias-corrected Adam
    /// update. Errors out on the first non-finite gradient, naming the
    /// parameter.
    pub fn step(&mut self, model: &mut impl Parameterized, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let decay = 1.0 - lr * self.weight_decay;

        let mut idx = 0usize;
        let mut bad: Option<String> = None;
        let state = &mut self.state;
        model.visit_params_mut(&mut |p| {
            if bad.is_some() {
                return;
            }
            let (m, v) = &mut state[idx];
            idx += 1;
            // Snapshot grads first: accumulate_grad aliasing is not a
            // concern, but the borrow checker needs grad reads before the
            // value borrow.
            for (k, &g) in p.grad().data().iter().enumerate() {
                if !g.is_finite() {
                    bad = Some(p.name().to_string());
                    return;
                }
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
            }
            for (k, w) in p.value_mut().data_mut().iter_mut().enumerate() {
                *w *= decay;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(format!("gradient of parameter '{name}'")));
        }
        Ok(())
    }
}
