//! Synthetic paired music/dance dataset generator.
//!
//! Each pair shares a latent vector mapped into the two raw feature spaces
//! through fixed random linear maps. Music beats are placed periodically at a
//! sampled tempo; dance beats copy them with dropout and jitter controlled by
//! `beat_coupling` and `beat_jitter_frames`. The beat grid is additively
//! injected into the raw features (scaled by `beat_coupling`) so global
//! features carry beat-correlated signal. Everything derives from `seed`:
//! the same config produces byte-identical files.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{
    save_feature_matrix, save_manifest, BeatGrid, ClipRecord, Manifest, Split, BEAT_GRID_FPS,
};
use crate::error::{Error, Result};
use crate::mat::Mat;

const TEMPO_RANGE_BPM: (f64, f64) = (60.0, 180.0);

fn default_frames() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub latent_dim: usize,
    pub raw_dim_music: usize,
    pub raw_dim_dance: usize,
    #[serde(default = "default_frames")]
    pub frames: usize,
    pub beat_coupling: f64,
    pub beat_jitter_frames: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pairs: 100,
            latent_dim: 8,
            raw_dim_music: 24,
            raw_dim_dance: 32,
            frames: default_frames(),
            beat_coupling: 0.9,
            beat_jitter_frames: 1,
            noise_scale: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.n_pairs < 10 {
            violations.push(format!("n_pairs must be >= 10, got {}", self.n_pairs));
        }
        if self.latent_dim == 0 {
            violations.push("latent_dim must be positive".into());
        }
        if self.raw_dim_music == 0 {
            violations.push("raw_dim_music must be positive".into());
        }
        if self.raw_dim_dance == 0 {
            violations.push("raw_dim_dance must be positive".into());
        }
        if self.frames == 0 {
            violations.push("frames must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.beat_coupling) {
            violations.push(format!(
                "beat_coupling must be in [0,1], got {}",
                self.beat_coupling
            ));
        }
        if self.noise_scale < 0.0 {
            violations.push(format!("noise_scale must be >= 0, got {}", self.noise_scale));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { violations })
        }
    }
}

/// Per-pair seed derivation so generation order (or parallelism) cannot
/// change the streams.
fn pair_seed(master: u64, index: usize) -> u64 {
    use crate::seed::splitmix64;
    splitmix64(master ^ splitmix64(index as u64 + 1))
}

fn normal_mat(rng: &mut ChaCha20Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| {
        let v: f64 = rng.sample(StandardNormal);
        v * scale
    })
}

fn normal_vec(rng: &mut ChaCha20Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn periodic_beats(rng: &mut ChaCha20Rng, frames: usize) -> Vec<usize> {
    let bpm = rng.gen_range(TEMPO_RANGE_BPM.0..TEMPO_RANGE_BPM.1);
    let period = BEAT_GRID_FPS * 60.0 / bpm;
    let phase = rng.gen_range(0.0..period);
    let mut beats = Vec::new();
    let mut k = 0usize;
    loop {
        let t = (phase + k as f64 * period).round() as usize;
        if t >= frames {
            break;
        }
        beats.push(t);
        k += 1;
    }
    beats
}

/// Generates the dataset under `out_dir` (creating `features/` and `beats/`
/// subdirectories plus `manifest.jsonl`) and returns the loaded manifest.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let features_dir = out_dir.join("features");
    let beats_dir = out_dir.join("beats");
    for dir in [out_dir, &features_dir, &beats_dir] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }

    let mut master = ChaCha20Rng::seed_from_u64(cfg.seed);
    let map_scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let map_music = normal_mat(&mut master, cfg.raw_dim_music, cfg.latent_dim, map_scale);
    let map_dance = normal_mat(&mut master, cfg.raw_dim_dance, cfg.latent_dim, map_scale);
    let inject_music = normal_vec(&mut master, cfg.raw_dim_music);
    let inject_dance = normal_vec(&mut master, cfg.raw_dim_dance);

    let train_n = cfg.n_pairs * 8 / 10;
    let val_n = cfg.n_pairs / 10;

    let mut records = Vec::with_capacity(cfg.n_pairs);
    for i in 0..cfg.n_pairs {
        let mut rng = ChaCha20Rng::seed_from_u64(pair_seed(cfg.seed, i));
        let id = format!("pair{i:05}");

        let latent = normal_vec(&mut rng, cfg.latent_dim);
        let music_beats = periodic_beats(&mut rng, cfg.frames);
        let mut dance_frames: Vec<usize> = Vec::new();
        for &t in &music_beats {
            if rng.gen::<f64>() < cfg.beat_coupling {
                let j = if cfg.beat_jitter_frames == 0 {
                    0i64
                } else {
                    let j_max = cfg.beat_jitter_frames as i64;
                    rng.gen_range(-j_max..=j_max)
                };
                let shifted = (t as i64 + j).clamp(0, cfg.frames as i64 - 1) as usize;
                dance_frames.push(shifted);
            }
        }
        let music_grid = BeatGrid::from_beat_frames(&music_beats, cfg.frames)?;
        let dance_grid = BeatGrid::from_beat_frames(&dance_frames, cfg.frames)?;

        let build_raw = |map: &Mat, inject: &[f64], grid: &BeatGrid, rng: &mut ChaCha20Rng| {
            let d = map.rows();
            let mut base = vec![0.0; d];
            for r in 0..d {
                let mut s = 0.0;
                for (c, &z) in latent.iter().enumerate() {
                    s += map.get(r, c) * z;
                }
                base[r] = s;
            }
            Mat::from_fn(cfg.frames, d, |t, c| {
                let noise: f64 = rng.sample(StandardNormal);
                let beat = f64::from(grid.bits()[t]);
                base[c] + cfg.noise_scale * noise + cfg.beat_coupling * beat * inject[c]
            })
        };

        let music_raw = build_raw(&map_music, &inject_music, &music_grid, &mut rng);
        let dance_raw = build_raw(&map_dance, &inject_dance, &dance_grid, &mut rng);

        let record = ClipRecord {
            id: id.clone(),
            music_feature_path: format!("features/{id}.music.bdtf"),
            dance_feature_path: format!("features/{id}.dance.bdtf"),
            music_beat_path: format!("beats/{id}.music.bdtf"),
            dance_beat_path: format!("beats/{id}.dance.bdtf"),
            split: if i < train_n {
                Split::Train
            } else if i < train_n + val_n {
                Split::Val
            } else {
                Split::Test
            },
        };
        save_feature_matrix(out_dir.join(&record.music_feature_path), &music_raw)?;
        save_feature_matrix(out_dir.join(&record.dance_feature_path), &dance_raw)?;
        music_grid.save(out_dir.join(&record.music_beat_path))?;
        dance_grid.save(out_dir.join(&record.dance_beat_path))?;
        records.push(record);
    }

    let manifest_path = out_dir.join("manifest.jsonl");
    save_manifest(&manifest_path, &records)?;
    crate::data::load_manifest(&manifest_path)
}
