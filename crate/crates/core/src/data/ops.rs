//! Bucketing and reshaping between frame-level and clip-level representations.

use crate::data::{BeatGrid, FeatureSequence, RawFeatureSequence, Stream};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Evenly divides the F frames into L buckets and averages within each.
/// Buckets have floor(F/L) frames; the last bucket absorbs the remainder.
pub fn interval_average(raw: &RawFeatureSequence, l: usize) -> Result<FeatureSequence> {
    let f = raw.frames();
    let d = raw.dim();
    if l == 0 {
        return Err(Error::invalid("bucket count L must be positive"));
    }
    if f < l {
        return Err(Error::invalid(format!(
            "cannot average {f} frames into {l} buckets (need F >= L)"
        )));
    }
    let base = f / l;
    let mut out = Mat::zeros(l, d);
    for b in 0..l {
        let start = b * base;
        let end = if b == l - 1 { f } else { start + base };
        for t in start..end {
            let src = raw.values().row(t);
            let dst = out.row_mut(b);
            for (o, &v) in dst.iter_mut().zip(src.iter()) {
                *o += v;
            }
        }
        let inv = 1.0 / (end - start) as f64;
        for v in out.row_mut(b) {
            *v *= inv;
        }
    }
    FeatureSequence::new(out, Stream::Global)
}

/// Row-major reshape of a length L*d_b grid into an L x d_b beat feature.
pub fn beat_grid_to_feature(grid: &BeatGrid, l: usize, d_b: usize) -> Result<FeatureSequence> {
    if l == 0 || d_b == 0 {
        return Err(Error::invalid("L and d_b must be positive"));
    }
    if grid.len() != l * d_b {
        return Err(Error::invalid(format!(
            "beat grid length {} does not equal L*d_b = {}*{} = {}",
            grid.len(),
            l,
            d_b,
            l * d_b
        )));
    }
    let data: Vec<f64> = grid.bits().iter().map(|&b| f64::from(b)).collect();
    FeatureSequence::new(Mat::from_vec(l, d_b, data)?, Stream::Beat)
}

/// Inverse of [`beat_grid_to_feature`]: flattens an L x d_b beat feature back
/// into the grid it came from.
pub fn feature_to_beat_grid(feat: &FeatureSequence) -> Result<BeatGrid> {
    let mut bits = Vec::with_capacity(feat.values().len());
    for &v in feat.values().data() {
        if v == 0.0 {
            bits.push(0);
        } else if v == 1.0 {
            bits.push(1);
        } else {
            return Err(Error::invalid(format!(
                "beat feature entry {v} is not binary"
            )));
        }
    }
    BeatGrid::new(bits)
}

/// Maps each source beat at frame t to destination bin round(t*dst/src).
/// Beats that collide in one bin collapse to a single 1.
pub fn resample_beat_grid(grid: &BeatGrid, src_fps: f64, dst_fps: f64) -> Result<BeatGrid> {
    if !(src_fps > 0.0) || !(dst_fps > 0.0) {
        return Err(Error::invalid(format!(
            "frame rates must be positive, got src={src_fps} dst={dst_fps}"
        )));
    }
    let ratio = dst_fps / src_fps;
    let out_len = ((grid.len() as f64) * ratio).ceil().max(1.0) as usize;
    let mut bits = vec![0u8; out_len];
    for t in grid.beat_frames() {
        let bin = ((t as f64) * ratio).round() as usize;
        bits[bin.min(out_len - 1)] = 1;
    }
    BeatGrid::new(bits)
}
