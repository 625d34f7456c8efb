//! Symmetric contrastive training of the dual encoder, plus in-memory
//! dataset loading shared with evaluation.

mod loss;
mod optim;

pub use loss::{
    info_nce, similarity_matrix, total_loss, Direction, InfoNce, SimilarityMatrix, TotalLoss,
};
pub use optim::{cosine_lr, AdamW, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{
    interval_average, load_feature_matrix, BeatGrid, ClipRecord, FeatureSequence, Manifest,
    Modality, RawFeatureSequence, Split, BEAT_GRID_FPS,
};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{Ablation, EncodeCache, GuidedLoss, Model};
use crate::nn::{zero_grads, RunMode};
use crate::seed::derive_rng;

fn default_batch_size() -> usize {
    32
}
fn default_epochs() -> usize {
    150
}
fn default_lr() -> f64 {
    1e-5
}
fn default_weight_decay() -> f64 {
    0.2
}
fn default_beta_loss() -> f64 {
    0.4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta_loss: f64,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            beta_loss: default_beta_loss(),
            seed: 0,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.batch_size < 2 {
            violations.push(format!(
                "batch_size must be >= 2 for in-batch negatives, got {}",
                self.batch_size
            ));
        }
        if self.epochs == 0 {
            violations.push("epochs must be positive".into());
        }
        if !(self.lr > 0.0) {
            violations.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.weight_decay < 0.0 {
            violations.push(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.beta_loss < 0.0 {
            violations.push(format!("beta_loss must be >= 0, got {}", self.beta_loss));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { violations })
        }
    }
}

/// One clip pair with model-ready features.
#[derive(Debug, Clone)]
pub struct LoadedClip {
    pub id: String,
    pub music: FeatureSequence,
    pub dance: FeatureSequence,
    pub music_beats: BeatGrid,
    pub dance_beats: BeatGrid,
}

fn load_clip(
    manifest: &Manifest,
    record: &ClipRecord,
    seq_len: usize,
    beat_dim: usize,
) -> Result<LoadedClip> {
    let load_feature = |rel: &str, modality: Modality| -> Result<FeatureSequence> {
        let values = load_feature_matrix(manifest.resolve(rel))?;
        let raw = RawFeatureSequence::new(values, BEAT_GRID_FPS, modality)?;
        interval_average(&raw, seq_len)
    };
    let load_grid = |rel: &str| -> Result<BeatGrid> {
        let grid = BeatGrid::load(manifest.resolve(rel))?;
        if grid.len() != seq_len * beat_dim {
            return Err(Error::shape_in(
                format!("beat grid {rel}"),
                format!("length {}", seq_len * beat_dim),
                format!("length {}", grid.len()),
            ));
        }
        Ok(grid)
    };
    Ok(LoadedClip {
        id: record.id.clone(),
        music: load_feature(&record.music_feature_path, Modality::Music)?,
        dance: load_feature(&record.dance_feature_path, Modality::Dance)?,
        music_beats: load_grid(&record.music_beat_path)?,
        dance_beats: load_grid(&record.dance_beat_path)?,
    })
}

/// Loads every clip of a split into memory with interval averaging applied.
pub fn load_clips(
    manifest: &Manifest,
    split: Split,
    seq_len: usize,
    beat_dim: usize,
) -> Result<Vec<LoadedClip>> {
    manifest
        .split(split)
        .into_iter()
        .map(|r| load_clip(manifest, r, seq_len, beat_dim))
        .collect()
}

struct BatchEmbeddings {
    enhanced: Option<Vec<Vec<f64>>>,
    guided: Option<Vec<Vec<f64>>>,
}

struct BatchEncodings {
    music: BatchEmbeddings,
    dance: BatchEmbeddings,
    music_caches: Vec<EncodeCache>,
    dance_caches: Vec<EncodeCache>,
}

fn stack(rows: &[Vec<f64>]) -> Result<Mat> {
    Mat::from_rows(rows)
}

fn encode_batch(model: &Model, batch: &[&LoadedClip], mode: &mut RunMode) -> Result<BatchEncodings> {
    let preset = model.preset();
    let wants_enhanced = preset.has_enhanced_loss();
    let wants_guided = preset.guided_loss_kind() != GuidedLoss::None;
    let mut music = BatchEmbeddings {
        enhanced: wants_enhanced.then(Vec::new),
        guided: wants_guided.then(Vec::new),
    };
    let mut dance = BatchEmbeddings {
        enhanced: wants_enhanced.then(Vec::new),
        guided: wants_guided.then(Vec::new),
    };
    let mut music_caches = Vec::with_capacity(batch.len());
    let mut dance_caches = Vec::with_capacity(batch.len());
    for clip in batch {
        let (em, cm) = model.encode(
            Modality::Music,
            &clip.music,
            &clip.music_beats,
            &mut mode.reborrow(),
        )?;
        let (ed, cd) = model.encode(
            Modality::Dance,
            &clip.dance,
            &clip.dance_beats,
            &mut mode.reborrow(),
        )?;
        for (slot, clip_out) in [(&mut music, em), (&mut dance, ed)] {
            if let Some(rows) = slot.enhanced.as_mut() {
                rows.push(
                    clip_out
                        .e_enhanced
                        .ok_or_else(|| Error::invalid("preset expects an enhanced embedding"))?,
                );
            }
            if let Some(rows) = slot.guided.as_mut() {
                rows.push(
                    clip_out
                        .e_guided
                        .ok_or_else(|| Error::invalid("preset expects a guided embedding"))?,
                );
            }
        }
        music_caches.push(cm);
        dance_caches.push(cd);
    }
    Ok(BatchEncodings {
        music,
        dance,
        music_caches,
        dance_caches,
    })
}

/// In-batch music-by-dance similarity matrices (diagonal = positives) and the
/// preset-mapped loss. For `guided_only` the guided matrix plays the main
/// role; for `beat_loss` both streams weigh equally.
fn batch_total_loss(model: &Model, encodings: &BatchEncodings, beta: f64) -> Result<TotalLoss> {
    let preset = model.preset();
    let lambda = model.lambda();
    let m_e = match (&encodings.music.enhanced, &encodings.dance.enhanced) {
        (Some(m), Some(d)) => Some(stack(m)?.matmul_nt(&stack(d)?)?),
        _ => None,
    };
    let m_g = match (&encodings.music.guided, &encodings.dance.guided) {
        (Some(m), Some(d)) => Some(stack(m)?.matmul_nt(&stack(d)?)?),
        _ => None,
    };
    match preset.guided_loss_kind() {
        GuidedLoss::None => total_loss(m_e.as_ref().expect("enhanced matrix"), None, lambda, 0.0),
        GuidedLoss::Weighted => total_loss(
            m_e.as_ref().expect("enhanced matrix"),
            m_g.as_ref(),
            lambda,
            beta,
        ),
        GuidedLoss::Unit => match &m_e {
            Some(m_e) => total_loss(m_e, m_g.as_ref(), lambda, 1.0),
            None => total_loss(m_g.as_ref().expect("guided matrix"), None, lambda, 0.0),
        },
    }
}

/// Accumulates parameter gradients for one batch given the loss output.
fn batch_backward(model: &mut Model, encodings: &BatchEncodings, out: &TotalLoss) -> Result<()> {
    let preset = model.preset();
    // Matrix gradients -> embedding gradients. For M = E_m E_d^T the row
    // gradients are dE_m = G E_d and dE_d = G^T E_m.
    let to_embedding_grads =
        |g: &Mat, m_rows: &[Vec<f64>], d_rows: &[Vec<f64>]| -> Result<(Mat, Mat)> {
            let e_m = stack(m_rows)?;
            let e_d = stack(d_rows)?;
            Ok((g.matmul(&e_d)?, g.matmul_tn(&e_m)?))
        };

    let mut d_music_enhanced = None;
    let mut d_dance_enhanced = None;
    let mut d_music_guided = None;
    let mut d_dance_guided = None;
    if preset.has_enhanced_loss() {
        let (dm, dd) = to_embedding_grads(
            &out.d_m_e,
            encodings.music.enhanced.as_ref().expect("enhanced"),
            encodings.dance.enhanced.as_ref().expect("enhanced"),
        )?;
        d_music_enhanced = Some(dm);
        d_dance_enhanced = Some(dd);
        if let Some(g) = &out.d_m_g {
            let (dm, dd) = to_embedding_grads(
                g,
                encodings.music.guided.as_ref().expect("guided"),
                encodings.dance.guided.as_ref().expect("guided"),
            )?;
            d_music_guided = Some(dm);
            d_dance_guided = Some(dd);
        }
    } else {
        // guided_only: the main matrix was built from guided embeddings.
        let (dm, dd) = to_embedding_grads(
            &out.d_m_e,
            encodings.music.guided.as_ref().expect("guided"),
            encodings.dance.guided.as_ref().expect("guided"),
        )?;
        d_music_guided = Some(dm);
        d_dance_guided = Some(dd);
    }

    // Logit scale lives in log space: dL/ds = dL/dlambda * lambda.
    let d_log_scale = out.d_lambda * model.lambda();
    model
        .logit_scale
        .accumulate_grad(&Mat::from_vec(1, 1, vec![d_log_scale])?)?;

    for (k, (cm, cd)) in encodings
        .music_caches
        .iter()
        .zip(encodings.dance_caches.iter())
        .enumerate()
    {
        model.encode_backward(
            cm,
            d_music_enhanced.as_ref().map(|m| m.row(k)),
            d_music_guided.as_ref().map(|m| m.row(k)),
        )?;
        model.encode_backward(
            cd,
            d_dance_enhanced.as_ref().map(|m| m.row(k)),
            d_dance_guided.as_ref().map(|m| m.row(k)),
        )?;
    }
    Ok(())
}

/// The full training loss on a fixed batch in eval mode (dropout inactive);
/// forward only. Used as the scalar function under finite differences.
pub fn batch_loss_eval(model: &Model, batch: &[&LoadedClip], beta: f64) -> Result<f64> {
    let encodings = encode_batch(model, batch, &mut RunMode::Eval)?;
    Ok(batch_total_loss(model, &encodings, beta)?.total)
}

/// Forward + backward on a fixed batch in eval mode, accumulating parameter
/// gradients; returns the loss. The caller zeroes gradients first.
pub fn batch_loss_eval_backward(model: &mut Model, batch: &[&LoadedClip], beta: f64) -> Result<f64> {
    let encodings = encode_batch(model, batch, &mut RunMode::Eval)?;
    let out = batch_total_loss(model, &encodings, beta)?;
    batch_backward(model, &encodings, &out)?;
    Ok(out.total)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_e: f64,
    pub loss_g: f64,
    pub lr: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
}

/// Trains in place: seeded shuffles, batches of `batch_size` pairs (last
/// incomplete batch dropped), symmetric InfoNCE over the in-batch matrices,
/// AdamW with a cosine schedule over all steps, logit scale clamped after
/// every step. Appends one JSON line per epoch to `log_sink` when given.
/// Deterministic in (clips, config, seed).
pub fn fit(
    model: &mut Model,
    clips: &[LoadedClip],
    cfg: &TrainConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<FitReport> {
    cfg.validate()?;
    if model.preset() != cfg.ablation {
        return Err(Error::invalid(format!(
            "model preset {:?} does not match train config {:?}",
            model.preset(),
            cfg.ablation
        )));
    }
    if clips.len() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "train split of {} clips is smaller than one batch of {}",
            clips.len(),
            cfg.batch_size
        )));
    }

    let b = cfg.batch_size;
    let steps_per_epoch = clips.len() / b;
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut optimizer = AdamW::new(model, cfg.weight_decay);
    let mut dropout_rng = derive_rng(cfg.seed, 0xD0);

    let mut step = 0usize;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut derive_rng(cfg.seed, 0x5E0 + epoch as u64));

        let mut epoch_loss_e = 0.0;
        let mut epoch_loss_g = 0.0;
        let mut epoch_lr = 0.0;
        for chunk in order.chunks_exact(b) {
            zero_grads(model);
            let batch: Vec<&LoadedClip> = chunk.iter().map(|&i| &clips[i]).collect();
            let encodings = encode_batch(model, &batch, &mut RunMode::Train(&mut dropout_rng))?;
            let out = batch_total_loss(model, &encodings, cfg.beta_loss)?;
            if !out.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch} step {step} (loss_e={} loss_g={})",
                    out.loss_e_m2d + out.loss_e_d2m,
                    out.loss_g_m2d + out.loss_g_d2m
                )));
            }
            batch_backward(model, &encodings, &out)?;

            let lr_now = cosine_lr(step, total_steps, cfg.lr);
            optimizer.step(model, lr_now)?;
            model.clamp_logit_scale();

            epoch_lr = lr_now;
            epoch_loss_e += out.loss_e_m2d + out.loss_e_d2m;
            epoch_loss_g += out.loss_g_m2d + out.loss_g_d2m;
            step += 1;
        }

        let log = EpochLog {
            epoch,
            loss_e: epoch_loss_e / steps_per_epoch as f64,
            loss_g: epoch_loss_g / steps_per_epoch as f64,
            lr: epoch_lr,
            lambda: model.lambda(),
        };
        if let Some(sink) = log_sink.as_deref_mut() {
            serde_json::to_writer(&mut *sink, &log)?;
            sink.write_all(b"\n")
                .map_err(|e| Error::io("training log", e))?;
        }
        epochs.push(log);
    }

    Ok(FitReport { epochs, steps: step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, SynthConfig};
    use crate::model::{save_checkpoint, Ablation, Model, ModelConfig, Pooling};

    pub(crate) fn toy_model_config(ablation: Ablation) -> ModelConfig {
        ModelConfig {
            raw_dim_music: 6,
            raw_dim_dance: 8,
            d_u: 8,
            seq_len: 4,
            beat_dim: 4,
            layers: 2,
            heads: 2,
            ff_dim: None,
            dropout: 0.1,
            pooling: Pooling::Mean,
            logit_scale_init: 0.0,
            logit_scale_max: 100f64.ln(),
            ablation,
            use_layer_norm: true,
            use_positional: true,
        }
    }

    fn toy_dataset(dir: &std::path::Path, n_pairs: usize) -> Vec<LoadedClip> {
        let synth = SynthConfig {
            n_pairs,
            latent_dim: 4,
            raw_dim_music: 6,
            raw_dim_dance: 8,
            frames: 16,
            beat_coupling: 0.9,
            beat_jitter_frames: 1,
            noise_scale: 0.3,
            seed: 77,
        };
        let manifest = generate_synthetic_dataset(&synth, dir).unwrap();
        load_clips(&manifest, Split::Train, 4, 4).unwrap()
    }

    #[test]
    fn fit_is_deterministic_in_seed() {
        let dir = tempfile::tempdir().unwrap();
        let clips = toy_dataset(dir.path(), 12);
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 2,
            lr: 1e-3,
            weight_decay: 0.2,
            beta_loss: 0.4,
            seed: 7,
            ablation: Ablation::Full,
        };
        let run = |out: &std::path::Path| {
            let mut model = Model::new(toy_model_config(Ablation::Full), 7).unwrap();
            fit(&mut model, &clips, &cfg, None).unwrap();
            save_checkpoint(out, &model).unwrap();
            crate::model::checkpoint_hash(out).unwrap()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        assert_eq!(run(d1.path()), run(d2.path()));
    }

    #[test]
    fn initial_loss_is_near_ln_b_and_training_reduces_it() {
        let dir = tempfile::tempdir().unwrap();
        let clips = toy_dataset(dir.path(), 16);
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 40,
            lr: 1e-2,
            weight_decay: 0.02,
            beta_loss: 0.4,
            seed: 3,
            ablation: Ablation::Full,
        };
        let mut model_cfg = toy_model_config(Ablation::Full);
        model_cfg.logit_scale_init = 5f64.ln();
        let mut model = Model::new(model_cfg, 3).unwrap();
        let report = fit(&mut model, &clips, &cfg, None).unwrap();
        let first = &report.epochs[0];
        let expected = 2.0 * (cfg.batch_size as f64).ln();
        assert!(
            (first.loss_e - expected).abs() < 1.0,
            "initial enhanced loss {} vs 2 ln B = {expected}",
            first.loss_e
        );
        let last = report.epochs.last().unwrap();
        assert!(
            last.loss_e < first.loss_e * 0.8,
            "loss did not decrease: {} -> {}",
            first.loss_e,
            last.loss_e
        );
    }

    #[test]
    fn every_ablation_preset_trains_one_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let clips = toy_dataset(dir.path(), 10);
        for ablation in Ablation::ALL {
            let cfg = TrainConfig {
                batch_size: 4,
                epochs: 1,
                lr: 1e-3,
                weight_decay: 0.2,
                beta_loss: 0.4,
                seed: 11,
                ablation,
            };
            let mut model = Model::new(toy_model_config(ablation), 11).unwrap();
            let report = fit(&mut model, &clips, &cfg, None)
                .unwrap_or_else(|e| panic!("{ablation:?} failed: {e}"));
            assert_eq!(report.steps, 2);
        }
    }

    #[test]
    fn logit_scale_stays_clamped() {
        let dir = tempfile::tempdir().unwrap();
        let clips = toy_dataset(dir.path(), 10);
        let mut model_cfg = toy_model_config(Ablation::Full);
        model_cfg.logit_scale_init = 100f64.ln();
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 3,
            lr: 5e-2, // aggressive on purpose
            weight_decay: 0.0,
            beta_loss: 0.4,
            seed: 5,
            ablation: Ablation::Full,
        };
        let mut model = Model::new(model_cfg, 5).unwrap();
        fit(&mut model, &clips, &cfg, None).unwrap();
        assert!(model.log_logit_scale() <= 100f64.ln() + 1e-12);
    }

    #[test]
    fn mismatched_preset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let clips = toy_dataset(dir.path(), 10);
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 1,
            ablation: Ablation::Baseline,
            ..TrainConfig::default()
        };
        let mut model = Model::new(toy_model_config(Ablation::Full), 2).unwrap();
        assert!(fit(&mut model, &clips, &cfg, None).is_err());
    }
}
