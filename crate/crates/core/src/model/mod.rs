//! The beat-aware dual encoder: per-stream feature alignment, trans-temporal
//! encoding, beat-enhanced fusion, beat-guided cross-attention, and pooling
//! to unit-norm retrieval embeddings. Ablation presets rewire the pipeline
//! and construct only the components they use.

mod checkpoint;

pub use checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::{beat_grid_to_feature, BeatGrid, FeatureSequence, Modality};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::act::{gelu, gelu_backward};
use crate::nn::attention::AttentionCache;
use crate::nn::encoder::EncoderCache;
use crate::nn::linear::LinearCache;
use crate::nn::{
    AttentionConfig, EncoderConfig, Linear, MultiHeadAttention, Parameter, Parameterized, RunMode,
    TransformerEncoder,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoTranstemporal,
    NoFusion,
    NoGuided,
    Baseline,
    BeatLoss,
    FusionBefore,
    FusionAfter,
    GuidedOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 9] = [
        Ablation::Full,
        Ablation::NoTranstemporal,
        Ablation::NoFusion,
        Ablation::NoGuided,
        Ablation::Baseline,
        Ablation::BeatLoss,
        Ablation::FusionBefore,
        Ablation::FusionAfter,
        Ablation::GuidedOnly,
    ];

    pub fn uses_beat_inputs(self) -> bool {
        !matches!(self, Ablation::Baseline)
    }

    /// Global-stream encoder present? (In `FusionBefore` it runs after fusion.)
    fn has_eta_global(self) -> bool {
        !matches!(self, Ablation::NoTranstemporal)
    }

    fn has_eta_beat(self) -> bool {
        match self {
            Ablation::Full
            | Ablation::NoFusion
            | Ablation::NoGuided
            | Ablation::FusionAfter
            | Ablation::BeatLoss
            | Ablation::GuidedOnly => true,
            Ablation::NoTranstemporal | Ablation::Baseline | Ablation::FusionBefore => false,
        }
    }

    fn has_fusion(self) -> bool {
        matches!(
            self,
            Ablation::Full
                | Ablation::NoTranstemporal
                | Ablation::NoGuided
                | Ablation::FusionAfter
                | Ablation::FusionBefore
        )
    }

    fn has_guided_attention(self) -> bool {
        matches!(
            self,
            Ablation::Full | Ablation::NoTranstemporal | Ablation::NoFusion | Ablation::GuidedOnly
        )
    }

    /// Does training use the enhanced-stream loss?
    pub fn has_enhanced_loss(self) -> bool {
        !matches!(self, Ablation::GuidedOnly)
    }

    /// Weight multiplier applied to the guided-stream loss: `beta` scaled by
    /// this factor for presets where the auxiliary loss exists, and exactly
    /// 1.0 where the second stream is a co-equal loss. None = no guided loss.
    pub fn guided_loss_kind(self) -> GuidedLoss {
        match self {
            Ablation::Full | Ablation::NoTranstemporal | Ablation::NoFusion => GuidedLoss::Weighted,
            Ablation::BeatLoss | Ablation::GuidedOnly => GuidedLoss::Unit,
            Ablation::NoGuided
            | Ablation::Baseline
            | Ablation::FusionAfter
            | Ablation::FusionBefore => GuidedLoss::None,
        }
    }

    /// Which embedding serves retrieval at inference.
    pub fn eval_uses_guided(self) -> bool {
        matches!(self, Ablation::GuidedOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoTranstemporal => "no_transtemporal",
            Ablation::NoFusion => "no_fusion",
            Ablation::NoGuided => "no_guided",
            Ablation::Baseline => "baseline",
            Ablation::BeatLoss => "beat_loss",
            Ablation::FusionBefore => "fusion_before",
            Ablation::FusionAfter => "fusion_after",
            Ablation::GuidedOnly => "guided_only",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation preset '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidedLoss {
    None,
    /// Scaled by the beta hyperparameter.
    Weighted,
    /// Co-equal second contrastive term.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    First,
}

fn default_d_u() -> usize {
    256
}
fn default_seq_len() -> usize {
    10
}
fn default_beat_dim() -> usize {
    10
}
fn default_layers() -> usize {
    6
}
fn default_heads() -> usize {
    4
}
fn default_dropout() -> f64 {
    0.3
}
fn default_pooling() -> Pooling {
    Pooling::Mean
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub raw_dim_music: usize,
    pub raw_dim_dance: usize,
    #[serde(default = "default_d_u")]
    pub d_u: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_beat_dim")]
    pub beat_dim: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Feed-forward width; defaults to 4 * d_u.
    #[serde(default)]
    pub ff_dim: Option<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_pooling")]
    pub pooling: Pooling,
    #[serde(default = "default_logit_scale")]
    pub logit_scale_init: f64,
    #[serde(default = "default_logit_scale")]
    pub logit_scale_max: f64,
    #[serde(default = "default_ablation")]
    pub ablation: Ablation,
    #[serde(default = "default_true")]
    pub use_layer_norm: bool,
    #[serde(default = "default_true")]
    pub use_positional: bool,
}

/// The converged scale of the pretrained encoder the paper borrows, ln(100);
/// doubles as the clamp ceiling.
fn default_logit_scale() -> f64 {
    100f64.ln()
}

fn default_ablation() -> Ablation {
    Ablation::Full
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.raw_dim_music == 0 {
            violations.push("raw_dim_music must be positive".into());
        }
        if self.raw_dim_dance == 0 {
            violations.push("raw_dim_dance must be positive".into());
        }
        if self.d_u == 0 {
            violations.push("d_u must be positive".into());
        }
        if self.seq_len == 0 {
            violations.push("seq_len must be positive".into());
        }
        if self.beat_dim == 0 {
            violations.push("beat_dim must be positive".into());
        }
        if self.layers == 0 {
            violations.push("layers must be positive".into());
        }
        if self.heads == 0 || self.d_u % self.heads.max(1) != 0 {
            violations.push(format!(
                "d_u {} must be divisible by heads {}",
                self.d_u, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            violations.push(format!("dropout must be in [0,1), got {}", self.dropout));
        }
        if self.ff_dim() < self.d_u {
            violations.push(format!(
                "ff_dim {} must be at least d_u {}",
                self.ff_dim(),
                self.d_u
            ));
        }
        if self.logit_scale_init > self.logit_scale_max {
            violations.push(format!(
                "logit_scale_init {} exceeds logit_scale_max {}",
                self.logit_scale_init, self.logit_scale_max
            ));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { violations })
        }
    }

    pub fn ff_dim(&self) -> usize {
        self.ff_dim.unwrap_or(4 * self.d_u)
    }

    pub fn raw_dim(&self, modality: Modality) -> usize {
        match modality {
            Modality::Music => self.raw_dim_music,
            Modality::Dance => self.raw_dim_dance,
        }
    }

    fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            model_dim: self.d_u,
            heads: self.heads,
            ff_dim: self.ff_dim(),
            dropout_rate: self.dropout,
            use_layer_norm: self.use_layer_norm,
            use_positional: self.use_positional,
        }
    }

    fn attention_config(&self) -> AttentionConfig {
        AttentionConfig {
            model_dim: self.d_u,
            heads: self.heads,
            dropout_rate: self.dropout,
            use_layer_norm: self.use_layer_norm,
        }
    }
}

/// Two linear layers with the smooth rectifier between; realizes the
/// alignment and fusion MLPs.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub lin_in: Linear,
    pub lin_out: Linear,
}

pub struct Mlp2Cache {
    lin_in: LinearCache,
    pre_act: Mat,
    lin_out: LinearCache,
}

impl Mlp2 {
    fn new(name: &str, d_in: usize, d_hidden: usize, d_out: usize, rng: &mut ChaCha20Rng) -> Self {
        Mlp2 {
            lin_in: Linear::new(&format!("{name}.lin_in"), d_in, d_hidden, rng),
            lin_out: Linear::new(&format!("{name}.lin_out"), d_hidden, d_out, rng),
        }
    }

    pub fn d_in(&self) -> usize {
        self.lin_in.d_in()
    }

    pub fn forward(&self, x: &Mat) -> Result<(Mat, Mlp2Cache)> {
        let (pre_act, lin_in) = self.lin_in.forward(x)?;
        let activated = gelu(&pre_act);
        let (y, lin_out) = self.lin_out.forward(&activated)?;
        Ok((
            y,
            Mlp2Cache {
                lin_in,
                pre_act,
                lin_out,
            },
        ))
    }

    pub fn backward(&mut self, cache: &Mlp2Cache, dy: &Mat) -> Result<Mat> {
        let d_act = self.lin_out.backward(&cache.lin_out, dy)?;
        let d_pre = gelu_backward(&cache.pre_act, &d_act);
        self.lin_in.backward(&cache.lin_in, &d_pre)
    }
}

impl Parameterized for Mlp2 {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.lin_in.visit_params(f);
        self.lin_out.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.lin_in.visit_params_mut(f);
        self.lin_out.visit_params_mut(f);
    }
}

/// Temporal mean (or first-row) pooling followed by L2 normalization.
pub fn pool_embed(seq: &Mat, pooling: Pooling) -> Result<(Vec<f64>, PoolCache)> {
    let pooled = match pooling {
        Pooling::Mean => seq.mean_rows(),
        Pooling::First => seq.row(0).to_vec(),
    };
    let norm = crate::mat::norm(&pooled);
    if norm == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    let unit: Vec<f64> = pooled.iter().map(|&v| v / norm).collect();
    Ok((
        unit.clone(),
        PoolCache {
            unit,
            norm,
            rows: seq.rows(),
            pooling,
        },
    ))
}

pub struct PoolCache {
    unit: Vec<f64>,
    norm: f64,
    rows: usize,
    pooling: Pooling,
}

/// Backward of [`pool_embed`]: gradient w.r.t. the pre-pool sequence.
pub fn pool_backward(cache: &PoolCache, d_unit: &[f64]) -> Mat {
    let d = cache.unit.len();
    let inner: f64 = cache
        .unit
        .iter()
        .zip(d_unit.iter())
        .map(|(&e, &g)| e * g)
        .sum();
    let d_pooled: Vec<f64> = cache
        .unit
        .iter()
        .zip(d_unit.iter())
        .map(|(&e, &g)| (g - e * inner) / cache.norm)
        .collect();
    match cache.pooling {
        Pooling::Mean => {
            let scale = 1.0 / cache.rows as f64;
            Mat::from_fn(cache.rows, d, |_, c| d_pooled[c] * scale)
        }
        Pooling::First => {
            let mut m = Mat::zeros(cache.rows, d);
            m.row_mut(0).copy_from_slice(&d_pooled);
            m
        }
    }
}

/// Elementwise sum and product of the two streams, concatenated on the
/// feature axis: L x 2d.
fn fusion_concat(g: &Mat, b: &Mat) -> Result<Mat> {
    g.add(b)?.hcat(&g.hadamard(b)?)
}

/// One modality's component stack.
#[derive(Debug, Clone)]
struct Branch {
    zeta_g: Mlp2,
    zeta_b: Option<Mlp2>,
    eta_g: Option<TransformerEncoder>,
    eta_b: Option<TransformerEncoder>,
    fuse: Option<Mlp2>,
    bgie: Option<MultiHeadAttention>,
}

impl Branch {
    fn new(cfg: &ModelConfig, modality: Modality, rng: &mut ChaCha20Rng) -> Result<Self> {
        let suffix = match modality {
            Modality::Music => "m",
            Modality::Dance => "d",
        };
        let preset = cfg.ablation;
        let d_u = cfg.d_u;
        let zeta_g = Mlp2::new(&format!("zeta_{suffix}"), cfg.raw_dim(modality), d_u, d_u, rng);
        let zeta_b = preset
            .uses_beat_inputs()
            .then(|| Mlp2::new(&format!("zeta_b{suffix}"), cfg.beat_dim, d_u, d_u, rng));
        let eta_g = if preset.has_eta_global() {
            Some(TransformerEncoder::new(
                &format!("eta_{suffix}"),
                cfg.encoder_config(),
                rng,
            )?)
        } else {
            None
        };
        let eta_b = if preset.has_eta_beat() {
            Some(TransformerEncoder::new(
                &format!("eta_b{suffix}"),
                cfg.encoder_config(),
                rng,
            )?)
        } else {
            None
        };
        let fuse = preset
            .has_fusion()
            .then(|| Mlp2::new(&format!("fuse_{suffix}"), 2 * d_u, d_u, d_u, rng));
        let bgie = if preset.has_guided_attention() {
            Some(MultiHeadAttention::new(
                &format!("bgie_{suffix}"),
                cfg.attention_config(),
                rng,
            )?)
        } else {
            None
        };
        Ok(Branch {
            zeta_g,
            zeta_b,
            eta_g,
            eta_b,
            fuse,
            bgie,
        })
    }
}

impl Parameterized for Branch {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.zeta_g.visit_params(f);
        if let Some(m) = &self.zeta_b {
            m.visit_params(f);
        }
        if let Some(m) = &self.eta_g {
            m.visit_params(f);
        }
        if let Some(m) = &self.eta_b {
            m.visit_params(f);
        }
        if let Some(m) = &self.fuse {
            m.visit_params(f);
        }
        if let Some(m) = &self.bgie {
            m.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.zeta_g.visit_params_mut(f);
        if let Some(m) = &mut self.zeta_b {
            m.visit_params_mut(f);
        }
        if let Some(m) = &mut self.eta_g {
            m.visit_params_mut(f);
        }
        if let Some(m) = &mut self.eta_b {
            m.visit_params_mut(f);
        }
        if let Some(m) = &mut self.fuse {
            m.visit_params_mut(f);
        }
        if let Some(m) = &mut self.bgie {
            m.visit_params_mut(f);
        }
    }
}

/// Pooled, L2-normalized clip embeddings. Which slots are present depends on
/// the ablation preset.
#[derive(Debug, Clone)]
pub struct EncodedClip {
    pub e_enhanced: Option<Vec<f64>>,
    pub e_guided: Option<Vec<f64>>,
    pub modality: Modality,
}

struct FusionCache {
    left: Mat,
    right: Mat,
    mlp: Mlp2Cache,
}

pub struct EncodeCache {
    modality: Modality,
    zeta_g: Mlp2Cache,
    zeta_b: Option<Mlp2Cache>,
    eta_g: Option<EncoderCache>,
    eta_b: Option<EncoderCache>,
    /// `Standard`: fusion of the post-encoder streams. `FusionFirst`: fusion
    /// of the aligned streams, encoder applied afterwards.
    fusion: Option<FusionCache>,
    fusion_first: bool,
    bgie: Option<AttentionCache>,
    pool_enhanced: Option<PoolCache>,
    pool_guided: Option<PoolCache>,
}

/// Complete dual encoder.
pub struct Model {
    cfg: ModelConfig,
    music: Branch,
    dance: Branch,
    /// Scalar stored in log space; similarity logits use exp of it.
    pub logit_scale: Parameter,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let music = Branch::new(&cfg, Modality::Music, &mut rng)?;
        let dance = Branch::new(&cfg, Modality::Dance, &mut rng)?;
        let logit_scale = Parameter::new(
            "logit_scale",
            Mat::from_vec(1, 1, vec![cfg.logit_scale_init])?,
        );
        Ok(Model {
            cfg,
            music,
            dance,
            logit_scale,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn preset(&self) -> Ablation {
        self.cfg.ablation
    }

    pub fn lambda(&self) -> f64 {
        self.logit_scale.value().get(0, 0).exp()
    }

    pub fn log_logit_scale(&self) -> f64 {
        self.logit_scale.value().get(0, 0)
    }

    /// Post-step clamp: the log scale never exceeds the configured maximum.
    pub fn clamp_logit_scale(&mut self) {
        let max = self.cfg.logit_scale_max;
        let v = self.logit_scale.value().get(0, 0);
        if v > max {
            self.logit_scale.value_mut().set(0, 0, max);
        }
    }

    fn branch(&self, modality: Modality) -> &Branch {
        match modality {
            Modality::Music => &self.music,
            Modality::Dance => &self.dance,
        }
    }

    fn branch_mut(&mut self, modality: Modality) -> &mut Branch {
        match modality {
            Modality::Music => &mut self.music,
            Modality::Dance => &mut self.dance,
        }
    }

    /// Feature alignment for one stream; exposed for tests and inspection.
    pub fn align_features(&self, modality: Modality, f: &FeatureSequence) -> Result<Mat> {
        let branch = self.branch(modality);
        let mlp = match f.stream() {
            crate::data::Stream::Global => &branch.zeta_g,
            crate::data::Stream::Beat => branch
                .zeta_b
                .as_ref()
                .ok_or_else(|| Error::invalid("this preset has no beat alignment"))?,
        };
        if f.dim() != mlp.d_in() {
            return Err(Error::shape_in(
                "align_features",
                format!("{} cols", mlp.d_in()),
                format!("{}x{}", f.buckets(), f.dim()),
            ));
        }
        Ok(mlp.forward(f.values())?.0)
    }

    /// Runs the full pipeline for one clip of one modality.
    pub fn encode(
        &self,
        modality: Modality,
        global: &FeatureSequence,
        beats: &BeatGrid,
        mode: &mut RunMode,
    ) -> Result<(EncodedClip, EncodeCache)> {
        let cfg = &self.cfg;
        let branch = self.branch(modality);
        let preset = cfg.ablation;

        if global.buckets() != cfg.seq_len {
            return Err(Error::shape_in(
                "encode global feature",
                format!("{} buckets", cfg.seq_len),
                format!("{}", global.buckets()),
            ));
        }
        if global.dim() != cfg.raw_dim(modality) {
            return Err(Error::shape_in(
                "encode global feature",
                format!("{} cols", cfg.raw_dim(modality)),
                format!("{}", global.dim()),
            ));
        }

        let (g0, zeta_g_cache) = branch.zeta_g.forward(global.values())?;

        let mut zeta_b_cache = None;
        let b0 = if let Some(zeta_b) = &branch.zeta_b {
            let beat_feature = beat_grid_to_feature(beats, cfg.seq_len, cfg.beat_dim)?;
            let (b0, c) = zeta_b.forward(beat_feature.values())?;
            zeta_b_cache = Some(c);
            Some(b0)
        } else {
            None
        };

        let fusion_first = matches!(preset, Ablation::FusionBefore);
        let mut fusion_cache = None;
        let mut eta_g_cache = None;
        let mut eta_b_cache = None;
        let mut pool_enhanced = None;
        let mut pool_guided = None;
        let mut bgie_cache = None;
        let mut e_enhanced = None;
        let mut e_guided = None;

        if fusion_first {
            let b0 = b0.as_ref().expect("fusion_before keeps the beat stream");
            let fuse = branch.fuse.as_ref().expect("fusion_before has the fusion MLP");
            let cat = fusion_concat(&g0, b0)?;
            let (fused, mlp_cache) = fuse.forward(&cat)?;
            fusion_cache = Some(FusionCache {
                left: g0.clone(),
                right: b0.clone(),
                mlp: mlp_cache,
            });
            let eta = branch.eta_g.as_ref().expect("fusion_before has one encoder");
            let (g_t, c) = eta.forward(&fused, mode)?;
            eta_g_cache = Some(c);
            let (unit, pc) = pool_embed(&g_t, cfg.pooling)?;
            pool_enhanced = Some(pc);
            e_enhanced = Some(unit);
        } else {
            let g_t = match &branch.eta_g {
                Some(eta) => {
                    let (y, c) = eta.forward(&g0, mode)?;
                    eta_g_cache = Some(c);
                    y
                }
                None => g0.clone(),
            };
            let b_t = match (&branch.eta_b, &b0) {
                (Some(eta), Some(b0)) => {
                    let (y, c) = eta.forward(b0, mode)?;
                    eta_b_cache = Some(c);
                    Some(y)
                }
                (None, Some(b0)) => Some(b0.clone()),
                _ => None,
            };

            if preset.has_enhanced_loss() {
                if let Some(fuse) = &branch.fuse {
                    let b_t = b_t.as_ref().expect("fusion requires the beat stream");
                    let cat = fusion_concat(&g_t, b_t)?;
                    let (fused, mlp_cache) = fuse.forward(&cat)?;
                    fusion_cache = Some(FusionCache {
                        left: g_t.clone(),
                        right: b_t.clone(),
                        mlp: mlp_cache,
                    });
                    let (unit, pc) = pool_embed(&fused, cfg.pooling)?;
                    pool_enhanced = Some(pc);
                    e_enhanced = Some(unit);
                } else {
                    let (unit, pc) = pool_embed(&g_t, cfg.pooling)?;
                    pool_enhanced = Some(pc);
                    e_enhanced = Some(unit);
                }
            }

            if let Some(bgie) = &branch.bgie {
                let b_t = b_t.as_ref().expect("guided attention requires the beat stream");
                let (guided, c) = bgie.forward(b_t, &g_t, mode)?;
                bgie_cache = Some(c);
                let (unit, pc) = pool_embed(&guided, cfg.pooling)?;
                pool_guided = Some(pc);
                e_guided = Some(unit);
            } else if matches!(preset, Ablation::BeatLoss) {
                let b_t = b_t.as_ref().expect("beat_loss keeps the beat stream");
                let (unit, pc) = pool_embed(b_t, cfg.pooling)?;
                pool_guided = Some(pc);
                e_guided = Some(unit);
            }
        }

        Ok((
            EncodedClip {
                e_enhanced,
                e_guided,
                modality,
            },
            EncodeCache {
                modality,
                zeta_g: zeta_g_cache,
                zeta_b: zeta_b_cache,
                eta_g: eta_g_cache,
                eta_b: eta_b_cache,
                fusion: fusion_cache,
                fusion_first,
                bgie: bgie_cache,
                pool_enhanced,
                pool_guided,
            },
        ))
    }

    /// Accumulates parameter gradients for one encoded clip given gradients
    /// of the loss w.r.t. its unit embeddings.
    pub fn encode_backward(
        &mut self,
        cache: &EncodeCache,
        d_enhanced: Option<&[f64]>,
        d_guided: Option<&[f64]>,
    ) -> Result<()> {
        let d_u = self.cfg.d_u;
        let seq_len = self.cfg.seq_len;
        let modality = cache.modality;
        let branch = self.branch_mut(modality);

        let d_g0: Mat;
        let mut d_b0: Option<Mat> = None;

        if cache.fusion_first {
            // enhanced = pool(eta(fuse(cat(g0, b0))))
            let d_unit = d_enhanced.unwrap_or(&[]);
            let mut d_fused = Mat::zeros(seq_len, d_u);
            if !d_unit.is_empty() {
                let pc = cache.pool_enhanced.as_ref().expect("pool cache");
                let d_g_t = pool_backward(pc, d_unit);
                let eta = branch.eta_g.as_mut().expect("encoder");
                d_fused = eta.backward(cache.eta_g.as_ref().expect("cache"), &d_g_t)?;
            }
            let fusion = cache.fusion.as_ref().expect("fusion cache");
            let fuse = branch.fuse.as_mut().expect("fusion MLP");
            let d_cat = fuse.backward(&fusion.mlp, &d_fused)?;
            let d_sum = d_cat.col_block(0, d_u);
            let d_prod = d_cat.col_block(d_u, d_u);
            d_g0 = d_sum.add(&d_prod.hadamard(&fusion.right)?)?;
            d_b0 = Some(d_sum.add(&d_prod.hadamard(&fusion.left)?)?);
        } else {
            let mut d_g_t = Mat::zeros(seq_len, d_u);
            let has_beat_stream = cache.zeta_b.is_some();
            let mut d_b_t = has_beat_stream.then(|| Mat::zeros(seq_len, d_u));

            if let Some(d_unit) = d_enhanced {
                let pc = cache.pool_enhanced.as_ref().ok_or_else(|| {
                    Error::invalid("enhanced gradient supplied but preset has no enhanced output")
                })?;
                let d_pre_pool = pool_backward(pc, d_unit);
                if let Some(fusion) = &cache.fusion {
                    let fuse = branch.fuse.as_mut().expect("fusion MLP");
                    let d_cat = fuse.backward(&fusion.mlp, &d_pre_pool)?;
                    let d_sum = d_cat.col_block(0, d_u);
                    let d_prod = d_cat.col_block(d_u, d_u);
                    d_g_t.add_assign(&d_sum.add(&d_prod.hadamard(&fusion.right)?)?)?;
                    d_b_t
                        .as_mut()
                        .expect("fusion implies beat stream")
                        .add_assign(&d_sum.add(&d_prod.hadamard(&fusion.left)?)?)?;
                } else {
                    d_g_t.add_assign(&d_pre_pool)?;
                }
            }

            if let Some(d_unit) = d_guided {
                let pc = cache.pool_guided.as_ref().ok_or_else(|| {
                    Error::invalid("guided gradient supplied but preset has no guided output")
                })?;
                let d_pre_pool = pool_backward(pc, d_unit);
                if let Some(bgie_cache) = &cache.bgie {
                    let bgie = branch.bgie.as_mut().expect("guided attention");
                    let (d_query, d_kv) = bgie.backward(bgie_cache, &d_pre_pool)?;
                    d_b_t
                        .as_mut()
                        .expect("guided attention implies beat stream")
                        .add_assign(&d_query)?;
                    d_g_t.add_assign(&d_kv)?;
                } else {
                    // beat_loss: guided slot is the pooled beat stream.
                    d_b_t
                        .as_mut()
                        .expect("beat_loss implies beat stream")
                        .add_assign(&d_pre_pool)?;
                }
            }

            d_g0 = match (&mut branch.eta_g, &cache.eta_g) {
                (Some(eta), Some(c)) => eta.backward(c, &d_g_t)?,
                _ => d_g_t,
            };
            if let Some(d_b_t) = d_b_t {
                d_b0 = Some(match (&mut branch.eta_b, &cache.eta_b) {
                    (Some(eta), Some(c)) => eta.backward(c, &d_b_t)?,
                    _ => d_b_t,
                });
            }
        }

        branch.zeta_g.backward(&cache.zeta_g, &d_g0)?;
        if let Some(d_b0) = d_b0.take() {
            let zeta_b = branch.zeta_b.as_mut().expect("beat alignment");
            zeta_b.backward(cache.zeta_b.as_ref().expect("cache"), &d_b0)?;
        }
        Ok(())
    }

    /// The embedding retrieval uses at inference for this preset.
    pub fn eval_embedding<'a>(&self, clip: &'a EncodedClip) -> Result<&'a [f64]> {
        let slot = if self.cfg.ablation.eval_uses_guided() {
            clip.e_guided.as_deref()
        } else {
            clip.e_enhanced.as_deref()
        };
        slot.ok_or_else(|| Error::invalid("encoded clip lacks the retrieval embedding"))
    }
}

impl Parameterized for Model {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.music.visit_params(f);
        self.dance.visit_params(f);
        f(&self.logit_scale);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.music.visit_params_mut(f);
        self.dance.visit_params_mut(f);
        f(&mut self.logit_scale);
    }
}
