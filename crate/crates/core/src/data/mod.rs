//! On-disk and in-memory data structures: feature sequences, beat grids,
//! dataset manifests, and the synthetic paired-dataset generator.

mod manifest;
mod ops;
mod synth;

pub use manifest::{load_manifest, save_manifest, Manifest};
pub use ops::{beat_grid_to_feature, feature_to_beat_grid, interval_average, resample_beat_grid};
pub use synth::{generate_synthetic_dataset, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Canonical beat-grid frame rate (frames per second).
pub const BEAT_GRID_FPS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Music,
    Dance,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Music => "music",
            Modality::Dance => "dance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Global,
    Beat,
}

/// Frame-level feature matrix straight from an upstream extractor,
/// before interval averaging. Shape F x d_raw.
#[derive(Debug, Clone)]
pub struct RawFeatureSequence {
    values: Mat,
    fps: f64,
    modality: Modality,
}

impl RawFeatureSequence {
    pub fn new(values: Mat, fps: f64, modality: Modality) -> Result<Self> {
        if values.rows() < 1 || values.cols() < 1 {
            return Err(Error::invalid(format!(
                "raw feature sequence must be at least 1x1, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("raw feature sequence".into()));
        }
        if !(fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(RawFeatureSequence { values, fps, modality })
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }
}

/// Time-bucketed feature matrix, L rows by d columns.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    values: Mat,
    stream: Stream,
}

impl FeatureSequence {
    pub fn new(values: Mat, stream: Stream) -> Result<Self> {
        if values.rows() < 1 {
            return Err(Error::invalid("feature sequence needs at least one row"));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("feature sequence".into()));
        }
        Ok(FeatureSequence { values, stream })
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn buckets(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }
}

/// Fixed-rate binary beat sequence; 1 marks a beat at that frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeatGrid {
    bits: Vec<u8>,
}

impl BeatGrid {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::invalid("beat grid must have at least one frame"));
        }
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::invalid(format!(
                "beat grid entries must be 0 or 1, found {bad}"
            )));
        }
        Ok(BeatGrid { bits })
    }

    pub fn zeros(len: usize) -> Result<Self> {
        BeatGrid::new(vec![0; len.max(1)])
    }

    /// Builds a grid of `len` frames with ones at the given frame indices.
    pub fn from_beat_frames(frames: &[usize], len: usize) -> Result<Self> {
        let mut bits = vec![0u8; len];
        for &f in frames {
            if f >= len {
                return Err(Error::invalid(format!(
                    "beat frame {f} out of range for grid of length {len}"
                )));
            }
            bits[f] = 1;
        }
        BeatGrid::new(bits)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn beat_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn beat_frames(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (b == 1).then_some(i))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::io::save_u8(path, &[self.bits.len() as u64], &self.bits)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let (dims, bits) = crate::io::load_u8(path)?;
        if dims.len() != 1 {
            return Err(Error::format(
                path.display().to_string(),
                "dims",
                format!("beat grid must be 1-dimensional, got {} dims", dims.len()),
            ));
        }
        BeatGrid::new(bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split '{other}'"))),
        }
    }
}

/// One paired clip in a dataset manifest. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub id: String,
    pub music_feature_path: String,
    pub dance_feature_path: String,
    pub music_beat_path: String,
    pub dance_beat_path: String,
    pub split: Split,
}

/// Loads a feature matrix saved as BDTF f32 with 2 dims.
pub fn load_feature_matrix(path: impl AsRef<std::path::Path>) -> Result<Mat> {
    let path = path.as_ref();
    let (dims, data) = crate::io::load_f32(path)?;
    if dims.len() != 2 {
        return Err(Error::format(
            path.display().to_string(),
            "dims",
            format!("feature matrix must be 2-dimensional, got {} dims", dims.len()),
        ));
    }
    Mat::from_vec(
        dims[0] as usize,
        dims[1] as usize,
        data.into_iter().map(f64::from).collect(),
    )
}

/// Saves a feature matrix as BDTF f32 (values narrowed to f32).
pub fn save_feature_matrix(path: impl AsRef<std::path::Path>, m: &Mat) -> Result<()> {
    let data: Vec<f32> = m.data().iter().map(|&v| v as f32).collect();
    crate::io::save_f32(path, &[m.rows() as u64, m.cols() as u64], &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beat_grid_rejects_non_binary() {
        assert!(BeatGrid::new(vec![0, 1, 2]).is_err());
        assert!(BeatGrid::new(vec![]).is_err());
        assert!(BeatGrid::new(vec![0, 1, 1, 0]).is_ok());
    }

    #[test]
    fn beat_grid_frames_round_trip() {
        let g = BeatGrid::from_beat_frames(&[0, 15, 99], 100).unwrap();
        assert_eq!(g.beat_frames(), vec![0, 15, 99]);
        assert_eq!(g.beat_count(), 3);
    }

    #[test]
    fn raw_feature_sequence_validates() {
        let m = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, f64::NAN]).unwrap();
        assert!(RawFeatureSequence::new(m, 10.0, Modality::Music).is_err());
        let m = Mat::zeros(2, 2);
        assert!(RawFeatureSequence::new(m.clone(), 0.0, Modality::Music).is_err());
        assert!(RawFeatureSequence::new(m, 10.0, Modality::Music).is_ok());
    }
}
