//! Pre-norm transformer encoder stack with fixed sinusoidal positional
//! encodings.

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::act::{gelu, gelu_backward};
use crate::nn::attention::{AttentionCache, AttentionConfig, MultiHeadAttention};
use crate::nn::dropout::{dropout, dropout_backward, DropoutCache};
use crate::nn::linear::{Linear, LinearCache};
use crate::nn::norm::{LayerNorm, LayerNormCache};
use crate::nn::param::{Parameter, Parameterized};
use crate::nn::RunMode;

#[derive(Debug, Clone, Copy)]
pub struct EncoderConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout_rate: f64,
    /// Attention-internal layer norms; bypassable for oracles.
    pub use_layer_norm: bool,
    /// Sinusoidal positional encodings at the stack input; disabled in tests
    /// that exercise permutation equivariance.
    pub use_positional: bool,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::invalid("encoder needs at least one layer"));
        }
        if self.ff_dim < self.model_dim {
            return Err(Error::invalid(format!(
                "ff_dim {} must be at least model_dim {}",
                self.ff_dim, self.model_dim
            )));
        }
        self.attention_config().validate()
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig {
            model_dim: self.model_dim,
            heads: self.heads,
            dropout_rate: self.dropout_rate,
            use_layer_norm: self.use_layer_norm,
        }
    }
}

/// pe[pos, i] = sin(pos / 10000^(i/d)) for even i, cos with the same
/// frequency for the following odd i.
pub fn positional_encoding(len: usize, dim: usize) -> Mat {
    Mat::from_fn(len, dim, |pos, i| {
        let exponent = (i - i % 2) as f64 / dim as f64;
        let angle = pos as f64 / 10000f64.powf(exponent);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    dropout_rate: f64,
    use_layer_norm: bool,
}

struct LayerCache {
    attn: AttentionCache,
    ln_ff: Option<LayerNormCache>,
    ff_in: LinearCache,
    ff_pre_act: Mat,
    ff_out: LinearCache,
    drop: DropoutCache,
}

impl EncoderLayer {
    fn new(name: &str, cfg: &EncoderConfig, rng: &mut ChaCha20Rng) -> Result<Self> {
        Ok(EncoderLayer {
            attn: MultiHeadAttention::new(&format!("{name}.attn"), cfg.attention_config(), rng)?,
            ln_ff: LayerNorm::new(&format!("{name}.ln_ff"), cfg.model_dim),
            ff_in: Linear::new(&format!("{name}.ff_in"), cfg.model_dim, cfg.ff_dim, rng),
            ff_out: Linear::new(&format!("{name}.ff_out"), cfg.ff_dim, cfg.model_dim, rng),
            dropout_rate: cfg.dropout_rate,
            use_layer_norm: cfg.use_layer_norm,
        })
    }

    fn forward(&self, x: &Mat, mode: &mut RunMode) -> Result<(Mat, LayerCache)> {
        // Pre-norm self-attention with residual; the attention module owns
        // its input norms and output dropout.
        let (attn_out, attn_cache) = self.attn.forward(x, x, mode)?;
        let h = x.add(&attn_out)?;

        let (normed, ln_ff) = if self.use_layer_norm {
            let (y, c) = self.ln_ff.forward(&h)?;
            (y, Some(c))
        } else {
            (h.clone(), None)
        };
        let (pre_act, ff_in) = self.ff_in.forward(&normed)?;
        let activated = gelu(&pre_act);
        let (ff, ff_out) = self.ff_out.forward(&activated)?;
        let (ff_dropped, drop) = dropout(&ff, self.dropout_rate, mode)?;
        let y = h.add(&ff_dropped)?;
        Ok((
            y,
            LayerCache {
                attn: attn_cache,
                ln_ff,
                ff_in,
                ff_pre_act: pre_act,
                ff_out,
                drop,
            },
        ))
    }

    fn backward(&mut self, cache: &LayerCache, dy: &Mat) -> Result<Mat> {
        let d_ff = dropout_backward(&cache.drop, dy)?;
        let d_activated = self.ff_out.backward(&cache.ff_out, &d_ff)?;
        let d_pre_act = gelu_backward(&cache.ff_pre_act, &d_activated);
        let d_normed = self.ff_in.backward(&cache.ff_in, &d_pre_act)?;
        let d_from_ff = match &cache.ln_ff {
            Some(c) => self.ln_ff.backward(c, &d_normed)?,
            None => d_normed,
        };
        let dh = dy.add(&d_from_ff)?;

        let (dq, dkv) = self.attn.backward(&cache.attn, &dh)?;
        let mut dx = dh;
        dx.add_assign(&dq)?;
        dx.add_assign(&dkv)?;
        Ok(dx)
    }
}

impl Parameterized for EncoderLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.attn.visit_params(f);
        self.ln_ff.visit_params(f);
        self.ff_in.visit_params(f);
        self.ff_out.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.attn.visit_params_mut(f);
        self.ln_ff.visit_params_mut(f);
        self.ff_in.visit_params_mut(f);
        self.ff_out.visit_params_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    cfg: EncoderConfig,
    layers: Vec<EncoderLayer>,
}

pub struct EncoderCache {
    layers: Vec<LayerCache>,
}

impl TransformerEncoder {
    pub fn new(name: &str, cfg: EncoderConfig, rng: &mut ChaCha20Rng) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.layers)
            .map(|i| EncoderLayer::new(&format!("{name}.layer{i}"), &cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransformerEncoder { cfg, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn forward(&self, x: &Mat, mode: &mut RunMode) -> Result<(Mat, EncoderCache)> {
        if x.cols() != self.cfg.model_dim {
            return Err(Error::shape_in(
                "transformer encoder input",
                format!("{} cols", self.cfg.model_dim),
                format!("{}x{}", x.rows(), x.cols()),
            ));
        }
        let mut state = if self.cfg.use_positional {
            x.add(&positional_encoding(x.rows(), x.cols()))?
        } else {
            x.clone()
        };
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(&state, mode)?;
            state = next;
            caches.push(cache);
        }
        Ok((state, EncoderCache { layers: caches }))
    }

    /// Positional encodings are additive constants, so the input gradient is
    /// just the chained layer gradient.
    pub fn backward(&mut self, cache: &EncoderCache, dy: &Mat) -> Result<Mat> {
        let mut grad = dy.clone();
        for (layer, layer_cache) in self.layers.iter_mut().zip(cache.layers.iter()).rev() {
            grad = layer.backward(layer_cache, &grad)?;
        }
        Ok(grad)
    }
}

impl Parameterized for TransformerEncoder {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        for layer in &self.layers {
            layer.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for layer in &mut self.layers {
            layer.visit_params_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_difference_check;
    use crate::nn::param::{param_names, zero_grads};
    use rand::SeedableRng;

    fn tiny_cfg(layers: usize) -> EncoderConfig {
        EncoderConfig {
            layers,
            model_dim: 8,
            heads: 2,
            ff_dim: 16,
            dropout_rate: 0.0,
            use_layer_norm: true,
            use_positional: true,
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let enc = TransformerEncoder::new("t", tiny_cfg(2), &mut rng).unwrap();
        let x = Mat::from_fn(5, 8, |r, c| ((r * 8 + c) as f64 * 0.23).sin());
        let (y1, _) = enc.forward(&x, &mut RunMode::Eval).unwrap();
        let (y2, _) = enc.forward(&x, &mut RunMode::Eval).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn zeroed_weights_leave_residual_identity_plus_positions() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let mut enc = TransformerEncoder::new("t", tiny_cfg(1), &mut rng).unwrap();
        enc.visit_params_mut(&mut |p| p.value_mut().fill(0.0));
        let x = Mat::from_fn(4, 8, |r, c| (r as f64) * 0.5 - (c as f64) * 0.25);
        let (y, _) = enc.forward(&x, &mut RunMode::Eval).unwrap();
        let expected = x.add(&positional_encoding(4, 8)).unwrap();
        for (a, b) in y.data().iter().zip(expected.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_names_are_unique() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let enc = TransformerEncoder::new("enc", tiny_cfg(3), &mut rng).unwrap();
        let names = param_names(&enc);
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
    }

    #[test]
    fn two_layer_gradient_matches_central_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let cfg = EncoderConfig {
            layers: 2,
            model_dim: 4,
            heads: 2,
            ff_dim: 8,
            dropout_rate: 0.0,
            use_layer_norm: true,
            use_positional: true,
        };
        let mut enc = TransformerEncoder::new("t", cfg, &mut rng).unwrap();
        let x = Mat::from_fn(3, 4, |r, c| ((r * 4 + c) as f64 * 0.41).sin());
        let mix = Mat::from_fn(3, 4, |r, c| ((r + 3 * c) as f64 * 0.13).cos());

        zero_grads(&mut enc);
        let (_, cache) = enc.forward(&x, &mut RunMode::Eval).unwrap();
        enc.backward(&cache, &mix).unwrap();

        let max_err = finite_difference_check(
            &mut enc,
            &mut |m: &mut TransformerEncoder| {
                let (y, _) = m.forward(&x, &mut RunMode::Eval)?;
                Ok(y.hadamard(&mix)?.data().iter().sum())
            },
            1e-4,
        )
        .unwrap();
        assert!(max_err < 1e-4, "max relative error {max_err}");
    }
}
