//! Beat extraction from raw inputs: kinematic dance beats from 2-D pose
//! keypoint sequences, and music beats from a mono waveform via a spectral
//! flux onset envelope plus dynamic-programming beat tracking.

mod onset;
mod pose;
mod track;

pub use onset::onset_envelope;
pub use pose::dance_beats_from_pose;
pub use track::track_music_beats;

use std::path::Path;

use crate::error::{Error, Result};

/// Default drop threshold for the kinematic detector, in normalized
/// coordinates; rejects numeric jitter around flat speed profiles.
pub const DEFAULT_MIN_DROP: f64 = 1e-3;

/// Default tempo search range for the music tracker.
pub const DEFAULT_TEMPO_RANGE_BPM: (f64, f64) = (60.0, 180.0);

/// 2-D pose keypoints per frame: F x J x 2 (frame, joint, xy).
#[derive(Debug, Clone)]
pub struct PoseSequence {
    keypoints: Vec<f64>,
    frames: usize,
    joints: usize,
    fps: f64,
}

impl PoseSequence {
    pub fn new(keypoints: Vec<f64>, frames: usize, joints: usize, fps: f64) -> Result<Self> {
        if frames < 3 {
            return Err(Error::invalid(format!(
                "pose sequence needs at least 3 frames, got {frames}"
            )));
        }
        if joints < 1 {
            return Err(Error::invalid("pose sequence needs at least one joint"));
        }
        if keypoints.len() != frames * joints * 2 {
            return Err(Error::shape(
                format!("{frames}x{joints}x2 = {} values", frames * joints * 2),
                format!("{} values", keypoints.len()),
            ));
        }
        if !keypoints.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("pose keypoints".into()));
        }
        if !(fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(PoseSequence { keypoints, frames, joints, fps })
    }

    /// Loads from a BDTF f32 tensor with dims F x J x 2.
    pub fn load(path: impl AsRef<Path>, fps: f64) -> Result<Self> {
        let path = path.as_ref();
        let (dims, data) = crate::io::load_f32(path)?;
        if dims.len() != 3 || dims[2] != 2 {
            return Err(Error::format(
                path.display().to_string(),
                "dims",
                format!("pose tensor must be F x J x 2, got {dims:?}"),
            ));
        }
        PoseSequence::new(
            data.into_iter().map(f64::from).collect(),
            dims[0] as usize,
            dims[1] as usize,
            fps,
        )
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    #[inline]
    pub fn xy(&self, frame: usize, joint: usize) -> (f64, f64) {
        let base = (frame * self.joints + joint) * 2;
        (self.keypoints[base], self.keypoints[base + 1])
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.keypoints
    }
}

/// Mono audio in [-1, 1].
#[derive(Debug, Clone)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.len() < (sample_rate as usize) / 10 {
            return Err(Error::invalid(format!(
                "waveform too short: {} samples at {} Hz (need at least 0.1 s)",
                samples.len(),
                sample_rate
            )));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::invalid(format!(
                "waveform samples must be finite and within [-1, 1], found {bad}"
            )));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::Waveform;

    /// Short decaying clicks at the given tempo, for tracker oracles.
    pub fn click_track(bpm: f64, seconds: f64, sr: u32) -> Waveform {
        let n = (seconds * sr as f64) as usize;
        let mut samples = vec![0.0f64; n];
        let period = 60.0 / bpm * sr as f64;
        let mut k = 0;
        loop {
            let at = (k as f64 * period) as usize;
            if at >= n {
                break;
            }
            for i in 0..64.min(n - at) {
                samples[at + i] +=
                    0.9 * (-(i as f64) / 8.0).exp() * if i % 2 == 0 { 1.0 } else { -1.0 };
            }
            k += 1;
        }
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        Waveform::new(samples, sr).unwrap()
    }
}

/// Onset strength per analysis frame, nonnegative.
#[derive(Debug, Clone)]
pub struct OnsetEnvelope {
    strength: Vec<f64>,
    fps: f64,
}

impl OnsetEnvelope {
    pub fn new(strength: Vec<f64>, fps: f64) -> Result<Self> {
        if strength.is_empty() {
            return Err(Error::invalid("onset envelope must have at least one frame"));
        }
        if strength.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::invalid("onset strength must be finite and nonnegative"));
        }
        if !(fps > 0.0) {
            return Err(Error::invalid("envelope fps must be positive"));
        }
        Ok(OnsetEnvelope { strength, fps })
    }

    pub fn strength(&self) -> &[f64] {
        &self.strength
    }

    pub fn len(&self) -> usize {
        self.strength.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strength.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }
}
