//! Dynamic-programming beat tracking over an onset envelope.
//!
//! Tempo is the autocorrelation-maximizing lag inside the requested BPM
//! range; the tracker then maximizes sum of onset strength along a beat
//! sequence with a log-squared deviation penalty from the tempo period
//! (tightness 100) and backtracks the best path.

use crate::beat::OnsetEnvelope;
use crate::data::{resample_beat_grid, BeatGrid, BEAT_GRID_FPS};
use crate::error::{Error, Result};

const TIGHTNESS: f64 = 100.0;

/// Autocorrelation tempo estimate, in BPM, restricted to `range_bpm`.
pub fn estimate_tempo_bpm(env: &OnsetEnvelope, range_bpm: (f64, f64)) -> Result<f64> {
    let (bpm_min, bpm_max) = range_bpm;
    if !(bpm_min > 0.0) || !(bpm_max > bpm_min) {
        return Err(Error::invalid(format!(
            "tempo range must satisfy 0 < min < max, got [{bpm_min}, {bpm_max}]"
        )));
    }
    let fps = env.fps();
    let s = env.strength();
    let lag_min = ((60.0 * fps / bpm_max).round() as usize).max(1);
    let lag_max = ((60.0 * fps / bpm_min).round() as usize).min(s.len().saturating_sub(1));
    if lag_min > lag_max {
        // Envelope too short to search the range; fall back to mid-range.
        return Ok((bpm_min + bpm_max) / 2.0);
    }
    let mut best_lag = lag_min;
    let mut best = f64::NEG_INFINITY;
    for lag in lag_min..=lag_max {
        let mut acc = 0.0;
        for t in 0..s.len() - lag {
            acc += s[t] * s[t + lag];
        }
        if acc > best {
            best = acc;
            best_lag = lag;
        }
    }
    Ok(60.0 * fps / best_lag as f64)
}

/// Tracks beats and resamples them to the canonical 10 fps grid.
/// An all-zero envelope yields an all-zero grid.
pub fn track_music_beats(env: &OnsetEnvelope, tempo_range_bpm: (f64, f64)) -> Result<BeatGrid> {
    let fps = env.fps();
    let out_native_len = env.len();
    let to_grid = |frames: &[usize]| -> Result<BeatGrid> {
        let native = BeatGrid::from_beat_frames(frames, out_native_len)?;
        resample_beat_grid(&native, fps, BEAT_GRID_FPS)
    };

    let max_strength = env.strength().iter().cloned().fold(0.0, f64::max);
    if max_strength <= 0.0 {
        return to_grid(&[]);
    }

    let bpm = estimate_tempo_bpm(env, tempo_range_bpm)?;
    let period = 60.0 * fps / bpm;

    // Normalize so the tightness penalty is commensurate across inputs.
    let s = env.strength();
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / s.len() as f64;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    let local: Vec<f64> = s.iter().map(|v| v * scale).collect();

    let lo_off = (period / 2.0).round() as usize;
    let hi_off = (period * 2.0).round() as usize;

    let n = local.len();
    let mut score = vec![0.0f64; n];
    let mut backlink = vec![usize::MAX; n];
    for t in 0..n {
        let mut best = f64::NEG_INFINITY;
        let mut best_u = usize::MAX;
        let u_hi = t.saturating_sub(lo_off.max(1));
        let u_lo = t.saturating_sub(hi_off);
        if t >= lo_off.max(1) {
            for u in u_lo..=u_hi {
                let gap = (t - u) as f64;
                let dev = (gap / period).ln();
                let cand = score[u] - TIGHTNESS * dev * dev;
                if cand > best {
                    best = cand;
                    best_u = u;
                }
            }
        }
        if best > 0.0 {
            score[t] = local[t] + best;
            backlink[t] = best_u;
        } else {
            score[t] = local[t];
        }
    }

    let mut end = 0;
    for (t, &v) in score.iter().enumerate() {
        if v > score[end] {
            end = t;
        }
    }

    let mut beats = Vec::new();
    let mut t = end;
    loop {
        beats.push(t);
        if backlink[t] == usize::MAX {
            break;
        }
        t = backlink[t];
    }
    beats.reverse();
    to_grid(&beats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beat::onset_envelope;
    use crate::beat::testutil::click_track;

    #[test]
    fn click_track_120_bpm_recovers_5_frame_spacing() {
        let env = onset_envelope(&click_track(120.0, 10.0, 16000)).unwrap();
        let bpm = estimate_tempo_bpm(&env, (60.0, 180.0)).unwrap();
        assert!((bpm - 120.0).abs() < 4.0, "estimated {bpm} BPM");

        let grid = track_music_beats(&env, (60.0, 180.0)).unwrap();
        let beats = grid.beat_frames();
        assert!(beats.len() >= 18, "found only {} beats", beats.len());
        // True beats every 0.5 s, i.e. frames 0, 5, 10, ... at 10 fps.
        for &b in &beats {
            let nearest = (b as f64 / 5.0).round() * 5.0;
            assert!(
                (b as f64 - nearest).abs() <= 1.0,
                "beat {b} more than 1 frame from the 5-frame lattice"
            );
        }
        for pair in beats.windows(2) {
            let gap = pair[1] as i64 - pair[0] as i64;
            assert!((gap - 5).abs() <= 1, "gap {gap}");
        }
    }

    #[test]
    fn all_zero_envelope_yields_all_zero_grid() {
        let env = OnsetEnvelope::new(vec![0.0; 500], 100.0).unwrap();
        let grid = track_music_beats(&env, (60.0, 180.0)).unwrap();
        assert_eq!(grid.beat_count(), 0);
        assert_eq!(grid.len(), 50);
    }

    #[test]
    fn sixty_bpm_click_gives_about_ten_beats_in_ten_seconds() {
        let env = onset_envelope(&click_track(60.0, 10.0, 16000)).unwrap();
        let grid = track_music_beats(&env, (60.0, 180.0)).unwrap();
        let count = grid.beat_count();
        assert!((9..=11).contains(&count), "expected ~10 beats, found {count}");
    }
}
