//! Spectral-flux onset envelope.
//!
//! STFT with a 1024-sample Hann window and hop = sample_rate/100 (centered
//! frames, zero padding at the edges), log-compressed magnitudes, half-wave
//! rectified frame-to-frame flux, then local mean subtraction over a 1 s
//! window clipped at zero.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::beat::{OnsetEnvelope, Waveform};
use crate::error::{Error, Result};

const WINDOW: usize = 1024;

pub fn onset_envelope(audio: &Waveform) -> Result<OnsetEnvelope> {
    let sr = audio.sample_rate() as usize;
    let hop = sr / 100;
    if hop == 0 {
        return Err(Error::invalid(format!(
            "sample rate {} too low for onset analysis (need >= 100 Hz)",
            sr
        )));
    }
    let fps = sr as f64 / hop as f64;
    let samples = audio.samples();
    let n_frames = samples.len() / hop + 1;

    let hann: Vec<f64> = (0..WINDOW)
        .map(|i| {
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (WINDOW as f64 - 1.0)).cos()
        })
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(WINDOW);
    let half = WINDOW / 2 + 1;

    let mut prev_logmag: Option<Vec<f64>> = None;
    let mut flux = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];
    for frame in 0..n_frames {
        let center = frame * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = center as i64 - (WINDOW / 2) as i64 + i as i64;
            let s = if idx >= 0 && (idx as usize) < samples.len() {
                samples[idx as usize]
            } else {
                0.0
            };
            *b = Complex::new(s * hann[i], 0.0);
        }
        fft.process(&mut buf);
        let logmag: Vec<f64> = buf[..half].iter().map(|c| (1.0 + c.norm()).ln()).collect();
        let f = match &prev_logmag {
            None => 0.0,
            Some(prev) => logmag
                .iter()
                .zip(prev.iter())
                .map(|(&cur, &pre)| (cur - pre).max(0.0))
                .sum(),
        };
        flux.push(f);
        prev_logmag = Some(logmag);
    }

    // Local mean subtraction over a centered 1 s window, clipped at zero.
    let half_win = (fps / 2.0).round() as usize;
    let strength: Vec<f64> = (0..flux.len())
        .map(|t| {
            let lo = t.saturating_sub(half_win);
            let hi = (t + half_win + 1).min(flux.len());
            let mean = flux[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            (flux[t] - mean).max(0.0)
        })
        .collect();

    OnsetEnvelope::new(strength, fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beat::testutil::click_track;

    #[test]
    fn silence_gives_zero_envelope() {
        let audio = Waveform::new(vec![0.0; 16000], 16000).unwrap();
        let env = onset_envelope(&audio).unwrap();
        assert!(env.strength().iter().all(|&v| v == 0.0));
        assert_eq!(env.fps(), 100.0);
    }

    #[test]
    fn constant_tone_has_no_flux_after_attack() {
        // 500 Hz at 16 kHz: exactly 5 cycles per hop, so every full window
        // sees the identical waveform and the flux is zero past the attack.
        let sr = 16000;
        let samples: Vec<f64> = (0..sr * 2)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 500.0 * i as f64 / sr as f64).sin())
            .collect();
        let env = onset_envelope(&Waveform::new(samples, sr as u32).unwrap()).unwrap();
        // Boundary frames see the tone switching on/off through the window
        // (real broadband change); the steady interior must be silent.
        let n = env.len();
        let interior: f64 = env.strength()[20..n - 10].iter().sum();
        assert!(interior < 1e-6, "interior flux {interior}");
    }

    #[test]
    fn click_train_peaks_at_half_second_spacing() {
        let env = onset_envelope(&click_track(120.0, 5.0, 16000)).unwrap();
        // Expect strong local maxima every 0.5 s (50 envelope frames).
        let s = env.strength();
        let mut peaks = Vec::new();
        for t in 1..s.len() - 1 {
            if s[t] > s[t - 1] && s[t] >= s[t + 1] && s[t] > 0.5 {
                peaks.push(t);
            }
        }
        assert!(peaks.len() >= 8, "found peaks {peaks:?}");
        for pair in peaks.windows(2) {
            let gap = pair[1] - pair[0];
            assert!(
                (gap as i64 - 50).abs() <= 2,
                "peak spacing {gap} not near 50 frames"
            );
        }
    }

    #[test]
    fn envelope_is_nonnegative() {
        let env = onset_envelope(&click_track(97.0, 3.0, 16000)).unwrap();
        assert!(env.strength().iter().all(|&v| v >= 0.0));
    }
}
