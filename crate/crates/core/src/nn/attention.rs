//! Multi-head attention over separate query and key/value streams.
//!
//! Query, Key and Value are projected from layer-normalized inputs
//! (per-stream norms; bypassable for hand-computed oracles), heads attend
//! with scaled dot products, and the concatenated heads pass through an
//! output projection followed by dropout in training mode. Self-attention is
//! the special case query_in = kv_in.

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::dropout::{dropout, dropout_backward, DropoutCache};
use crate::nn::linear::{Linear, LinearCache};
use crate::nn::norm::{LayerNorm, LayerNormCache};
use crate::nn::param::{Parameter, Parameterized};
use crate::nn::RunMode;

#[derive(Debug, Clone, Copy)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub dropout_rate: f64,
    pub use_layer_norm: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::invalid("attention needs at least one head"));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout rate must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// Row softmax with max-shift.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = Mat::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in out.row_mut(r).iter_mut().zip(row.iter()) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for o in out.row_mut(r) {
            *o *= inv;
        }
    }
    out
}

/// Given the softmax output `a` and upstream gradient `da`, returns the
/// gradient with respect to the logits: a .* (da - rowdot(da, a)).
pub fn softmax_rows_backward(a: &Mat, da: &Mat) -> Mat {
    let mut out = Mat::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        let arow = a.row(r);
        let drow = da.row(r);
        let inner: f64 = arow.iter().zip(drow.iter()).map(|(&x, &g)| x * g).sum();
        for c in 0..a.cols() {
            out.set(r, c, arow[c] * (drow[c] - inner));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    cfg: AttentionConfig,
    pub ln_query: LayerNorm,
    pub ln_kv: LayerNorm,
    pub proj_q: Linear,
    pub proj_k: Linear,
    pub proj_v: Linear,
    pub proj_out: Linear,
}

pub struct AttentionCache {
    ln_q: Option<LayerNormCache>,
    ln_kv: Option<LayerNormCache>,
    lin_q: LinearCache,
    lin_k: LinearCache,
    lin_v: LinearCache,
    lin_out: LinearCache,
    // Per head: (attention weights, Q, K, V).
    heads: Vec<(Mat, Mat, Mat, Mat)>,
    drop: DropoutCache,
}

impl MultiHeadAttention {
    pub fn new(name: &str, cfg: AttentionConfig, rng: &mut ChaCha20Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        Ok(MultiHeadAttention {
            cfg,
            ln_query: LayerNorm::new(&format!("{name}.ln_query"), d),
            ln_kv: LayerNorm::new(&format!("{name}.ln_kv"), d),
            proj_q: Linear::new_unbiased(&format!("{name}.proj_q"), d, d, rng),
            proj_k: Linear::new_unbiased(&format!("{name}.proj_k"), d, d, rng),
            proj_v: Linear::new_unbiased(&format!("{name}.proj_v"), d, d, rng),
            proj_out: Linear::new_unbiased(&format!("{name}.proj_out"), d, d, rng),
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.cfg
    }

    pub fn forward(
        &self,
        query_in: &Mat,
        kv_in: &Mat,
        mode: &mut RunMode,
    ) -> Result<(Mat, AttentionCache)> {
        let d = self.cfg.model_dim;
        for (label, m) in [("query", query_in), ("key/value", kv_in)] {
            if m.cols() != d {
                return Err(Error::shape_in(
                    format!("attention {label} input"),
                    format!("{d} cols"),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
        }

        let (qn, ln_q) = if self.cfg.use_layer_norm {
            let (y, c) = self.ln_query.forward(query_in)?;
            (y, Some(c))
        } else {
            (query_in.clone(), None)
        };
        let (kvn, ln_kv) = if self.cfg.use_layer_norm {
            let (y, c) = self.ln_kv.forward(kv_in)?;
            (y, Some(c))
        } else {
            (kv_in.clone(), None)
        };

        let (q, lin_q) = self.proj_q.forward(&qn)?;
        let (k, lin_k) = self.proj_k.forward(&kvn)?;
        let (v, lin_v) = self.proj_v.forward(&kvn)?;

        let hd = self.cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut concat = Mat::zeros(query_in.rows(), d);
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let qh = q.col_block(h * hd, hd);
            let kh = k.col_block(h * hd, hd);
            let vh = v.col_block(h * hd, hd);
            let logits = qh.matmul_nt(&kh)?.scale(scale);
            let weights = softmax_rows(&logits);
            let out_h = weights.matmul(&vh)?;
            concat.add_col_block(h * hd, &out_h);
            heads.push((weights, qh, kh, vh));
        }

        let (projected, lin_out) = self.proj_out.forward(&concat)?;
        let (y, drop) = dropout(&projected, self.cfg.dropout_rate, mode)?;
        Ok((
            y,
            AttentionCache {
                ln_q,
                ln_kv,
                lin_q,
                lin_k,
                lin_v,
                lin_out,
                heads,
                drop,
            },
        ))
    }

    /// Returns (d_query_in, d_kv_in). For self-attention the caller sums them.
    pub fn backward(&mut self, cache: &AttentionCache, dy: &Mat) -> Result<(Mat, Mat)> {
        let d = self.cfg.model_dim;
        let hd = self.cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();

        let d_projected = dropout_backward(&cache.drop, dy)?;
        let d_concat = self.proj_out.backward(&cache.lin_out, &d_projected)?;

        let l_kv = cache.heads[0].2.rows();
        let mut dq = Mat::zeros(dy.rows(), d);
        let mut dk = Mat::zeros(l_kv, d);
        let mut dv = Mat::zeros(l_kv, d);
        for (h, (weights, qh, kh, vh)) in cache.heads.iter().enumerate() {
            let d_out_h = d_concat.col_block(h * hd, hd);
            let d_weights = d_out_h.matmul_nt(vh)?;
            let d_vh = weights.matmul_tn(&d_out_h)?;
            let d_logits = softmax_rows_backward(weights, &d_weights);
            let d_qh = d_logits.matmul(kh)?.scale(scale);
            let d_kh = d_logits.matmul_tn(qh)?.scale(scale);
            dq.add_col_block(h * hd, &d_qh);
            dk.add_col_block(h * hd, &d_kh);
            dv.add_col_block(h * hd, &d_vh);
        }

        let d_qn = self.proj_q.backward(&cache.lin_q, &dq)?;
        let mut d_kvn = self.proj_k.backward(&cache.lin_k, &dk)?;
        d_kvn.add_assign(&self.proj_v.backward(&cache.lin_v, &dv)?)?;

        let d_query_in = match &cache.ln_q {
            Some(c) => self.ln_query.backward(c, &d_qn)?,
            None => d_qn,
        };
        let d_kv_in = match &cache.ln_kv {
            Some(c) => self.ln_kv.backward(c, &d_kvn)?,
            None => d_kvn,
        };
        Ok((d_query_in, d_kv_in))
    }
}

impl Parameterized for MultiHeadAttention {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.ln_query.visit_params(f);
        self.ln_kv.visit_params(f);
        self.proj_q.visit_params(f);
        self.proj_k.visit_params(f);
        self.proj_v.visit_params(f);
        self.proj_out.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.ln_query.visit_params_mut(f);
        self.ln_kv.visit_params_mut(f);
        self.proj_q.visit_params_mut(f);
        self.proj_k.visit_params_mut(f);
        self.proj_v.visit_params_mut(f);
        self.proj_out.visit_params_mut(f);
    }
}
