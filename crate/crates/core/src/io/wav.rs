//! Mono WAV loading (16-bit PCM or 32-bit float) for the music beat detector.

use std::path::Path;

use crate::beat::Waveform;
use crate::error::{Error, Result};

/// Reads a mono WAV file into a [`Waveform`]. Multi-channel files are
/// rejected rather than silently downmixed.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let disp = path.display().to_string();
    let reader =
        hound::WavReader::open(path).map_err(|e| Error::Wav { path: disp.clone(), reason: e.to_string() })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav {
            path: disp,
            reason: format!("expected mono, found {} channels", spec.channels),
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav { path: disp.clone(), reason: e.to_string() })?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav { path: disp.clone(), reason: e.to_string() })?,
        (fmt, bits) => {
            return Err(Error::Wav {
                path: disp,
                reason: format!("unsupported format {fmt:?}/{bits}-bit (want 16-bit PCM or 32-bit float)"),
            })
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_wav(path: &Path, samples: &[f32], rate: u32) {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn float_wav_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f32> = (0..16000).map(|i| (i as f32 * 0.01).sin() * 0.5).collect();
        write_wav(&path, &samples, 16000);
        let wf = load_wav(&path).unwrap();
        assert_eq!(wf.sample_rate(), 16000);
        assert_eq!(wf.samples().len(), 16000);
        assert!((wf.samples()[100] - samples[100] as f64).abs() < 1e-7);
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..8000 {
            w.write_sample(0i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(load_wav(&path).is_err());
    }
}
