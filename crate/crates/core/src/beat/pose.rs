//! Kinematic dance beats: strict local minima of mean joint speed.

use crate::beat::PoseSequence;
use crate::data::{resample_beat_grid, BeatGrid, BEAT_GRID_FPS};
use crate::error::Result;

/// Marks frame t a beat iff the per-frame mean joint speed s_t is a strict
/// local minimum and max(s_{t-1}, s_{t+1}) - s_t >= min_drop. Coordinates are
/// normalized per sequence (zero mean, unit RMS) first so `min_drop` is
/// scale-free. The resulting grid is resampled to 10 fps.
pub fn dance_beats_from_pose(poses: &PoseSequence, min_drop: f64) -> Result<BeatGrid> {
    let speeds = mean_joint_speeds(poses);
    let mut beat_frames = Vec::new();
    for t in 1..speeds.len().saturating_sub(1) {
        let (prev, cur, next) = (speeds[t - 1], speeds[t], speeds[t + 1]);
        if cur < prev && cur < next && prev.max(next) - cur >= min_drop {
            beat_frames.push(t);
        }
    }
    let native = BeatGrid::from_beat_frames(&beat_frames, speeds.len())?;
    resample_beat_grid(&native, poses.fps(), BEAT_GRID_FPS)
}

/// Per-frame speed: mean over joints of the Euclidean norm of the coordinate
/// difference between consecutive (normalized) frames. Length F-1.
fn mean_joint_speeds(poses: &PoseSequence) -> Vec<f64> {
    let normalized = normalize(poses);
    let (frames, joints) = (poses.frames(), poses.joints());
    let mut speeds = Vec::with_capacity(frames - 1);
    for t in 0..frames - 1 {
        let mut sum = 0.0;
        for j in 0..joints {
            let a = (t * joints + j) * 2;
            let b = ((t + 1) * joints + j) * 2;
            let dx = normalized[b] - normalized[a];
            let dy = normalized[b + 1] - normalized[a + 1];
            sum += (dx * dx + dy * dy).sqrt();
        }
        speeds.push(sum / joints as f64);
    }
    speeds
}

/// Zero-mean per axis, then unit RMS over the centered coordinates. Constant
/// sequences come out all-zero (RMS guard), which yields zero speed.
fn normalize(poses: &PoseSequence) -> Vec<f64> {
    let raw = poses.raw();
    let n = raw.len() / 2;
    let (mut mean_x, mut mean_y) = (0.0, 0.0);
    for pair in raw.chunks_exact(2) {
        mean_x += pair[0];
        mean_y += pair[1];
    }
    mean_x /= n as f64;
    mean_y /= n as f64;

    let mut centered = Vec::with_capacity(raw.len());
    let mut sq = 0.0;
    for pair in raw.chunks_exact(2) {
        let x = pair[0] - mean_x;
        let y = pair[1] - mean_y;
        sq += x * x + y * y;
        centered.push(x);
        centered.push(y);
    }
    let rms = (sq / raw.len() as f64).sqrt();
    if rms > 0.0 {
        for v in &mut centered {
            *v /= rms;
        }
    }
    centered
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One joint whose x coordinate walks so that consecutive-frame speeds
    /// follow the requested profile.
    fn pose_with_speed_profile(profile: &[f64], fps: f64) -> PoseSequence {
        let frames = profile.len() + 1;
        let mut x = 0.0;
        let mut kp = Vec::with_capacity(frames * 2);
        kp.extend_from_slice(&[x, 0.0]);
        for &s in profile {
            x += s;
            kp.extend_from_slice(&[x, 0.0]);
        }
        PoseSequence::new(kp, frames, 1, fps).unwrap()
    }

    #[test]
    fn single_minimum_becomes_a_beat() {
        // Profile [5,4,3,1,3,4,5]: strict minimum at index 3.
        let poses = pose_with_speed_profile(&[5.0, 4.0, 3.0, 1.0, 3.0, 4.0, 5.0], BEAT_GRID_FPS);
        let grid = dance_beats_from_pose(&poses, 1e-3).unwrap();
        assert_eq!(grid.beat_frames(), vec![3]);
    }

    #[test]
    fn constant_pose_has_no_beats() {
        let kp = vec![1.0; 30 * 4 * 2];
        let poses = PoseSequence::new(kp, 30, 4, 30.0).unwrap();
        let grid = dance_beats_from_pose(&poses, 1e-3).unwrap();
        assert_eq!(grid.beat_count(), 0);
    }

    #[test]
    fn oscillating_joint_beats_at_reversals() {
        // x(t) = sin(2*pi*0.9*t + 0.3) sampled at 30 fps for 4 s. The phase
        // keeps reversals off exact sample instants (a reversal exactly on a
        // sample makes the two neighboring speeds tie, and ties are not
        // strict minima).
        let fps = 30.0;
        let frames = 120;
        let freq = 0.9;
        let phase = 0.3;
        let mut kp = Vec::with_capacity(frames * 2);
        for t in 0..frames {
            let x = (2.0 * std::f64::consts::PI * freq * t as f64 / fps + phase).sin();
            kp.extend_from_slice(&[x, 0.0]);
        }
        let poses = PoseSequence::new(kp, frames, 1, fps).unwrap();
        let grid = dance_beats_from_pose(&poses, 1e-3).unwrap();
        let found = grid.beat_frames();
        // Reversal instants: sin' = 0 at 2*pi*f*t + phase = pi/2 + k*pi.
        let expected: Vec<usize> = (0..)
            .map(|k| {
                (std::f64::consts::FRAC_PI_2 - phase + k as f64 * std::f64::consts::PI)
                    / (2.0 * std::f64::consts::PI * freq)
            })
            .take_while(|&t| t < (frames - 1) as f64 / fps)
            .map(|t| (t * BEAT_GRID_FPS).round() as usize)
            .collect();
        assert_eq!(found.len(), expected.len(), "found {found:?} expected {expected:?}");
        for (f, e) in found.iter().zip(expected.iter()) {
            assert!(
                (*f as i64 - *e as i64).abs() <= 1,
                "beat at {f} not within 1 frame of {e}"
            );
        }
    }

    #[test]
    fn invariant_under_translation_and_joint_permutation() {
        let fps = 20.0;
        let frames = 60;
        let joints = 3;
        let mut kp = Vec::new();
        for t in 0..frames {
            for j in 0..joints {
                let phase = j as f64 * 0.7;
                let x = ((t as f64 * 0.41) + phase).sin() * (1.0 + j as f64);
                let y = ((t as f64 * 0.23) + phase).cos() * 2.0;
                kp.extend_from_slice(&[x, y]);
            }
        }
        let base = PoseSequence::new(kp.clone(), frames, joints, fps).unwrap();
        let grid_base = dance_beats_from_pose(&base, 1e-3).unwrap();

        let shifted: Vec<f64> = kp
            .chunks_exact(2)
            .flat_map(|p| [p[0] + 137.5, p[1] - 42.0])
            .collect();
        let grid_shifted =
            dance_beats_from_pose(&PoseSequence::new(shifted, frames, joints, fps).unwrap(), 1e-3)
                .unwrap();
        assert_eq!(grid_base, grid_shifted);

        // Reverse joint order within every frame.
        let mut permuted = vec![0.0; kp.len()];
        for t in 0..frames {
            for j in 0..joints {
                let src = (t * joints + j) * 2;
                let dst = (t * joints + (joints - 1 - j)) * 2;
                permuted[dst] = kp[src];
                permuted[dst + 1] = kp[src + 1];
            }
        }
        let grid_permuted =
            dance_beats_from_pose(&PoseSequence::new(permuted, frames, joints, fps).unwrap(), 1e-3)
                .unwrap();
        assert_eq!(grid_base, grid_permuted);
    }
}
