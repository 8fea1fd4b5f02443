use ndarray::{s, Array4, ArrayView4, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;

/// Mirrors `pad` frames onto each end, edge frame included, so the padded
/// clip reads `x[pad-1], .., x[0], x[0], .., x[T-1], x[T-1], .., x[T-pad]`.
fn reflect_pad(x: ArrayView4<'_, f32>, pad: usize) -> Array4<f32> {
    let (c, t, v, m) = x.dim();
    let mut out = Array4::<f32>::zeros((c, t + 2 * pad, v, m));
    for i in 0..t + 2 * pad {
        let src = if i < pad {
            pad - 1 - i
        } else if i < pad + t {
            i - pad
        } else {
            t - 1 - (i - pad - t)
        };
        out.index_axis_mut(Axis(1), i).assign(&x.index_axis(Axis(1), src));
    }
    out
}

/// Endpoint-preserving linear resampling along the time axis.
pub fn resize_time(x: ArrayView4<'_, f32>, window: usize) -> Array4<f32> {
    let (c, t, v, m) = x.dim();
    if t == window {
        return x.to_owned();
    }
    let mut out = Array4::<f32>::zeros((c, window, v, m));
    for i in 0..window {
        let pos = if window == 1 || t == 1 { 0.0 } else { i as f64 * (t - 1) as f64 / (window - 1) as f64 };
        let lo = (pos.floor() as usize).min(t - 1);
        let hi = (lo + 1).min(t - 1);
        let w = (pos - lo as f64) as f32;
        let a = x.index_axis(Axis(1), lo);
        let b = x.index_axis(Axis(1), hi);
        let mut dst = out.index_axis_mut(Axis(1), i);
        if w == 0.0 {
            dst.assign(&a);
        } else {
            dst.assign(&(&a * (1.0 - w) + &b * w));
        }
    }
    out
}

/// Deterministic core of [`temporal_crop_pad`]: pads by `pad` frames per
/// side, keeps `len` frames starting at `start` of the padded clip, and
/// resamples them to `window` frames.
pub fn temporal_crop_pad_at(
    seq: &SkeletonSequence,
    pad: usize,
    start: usize,
    len: usize,
    window: usize,
) -> Result<SkeletonSequence> {
    let t = seq.frames();
    if t < 2 {
        return Err(Error::DegenerateLength(t));
    }
    if window == 0 {
        return Err(Error::InvalidConfig("crop window must be at least 1".into()));
    }
    if pad > t {
        return Err(Error::OutOfRange(format!("padding {pad} exceeds clip length {t}")));
    }
    let padded = reflect_pad(seq.coords().view(), pad);
    let total = t + 2 * pad;
    if len == 0 || start + len > total {
        return Err(Error::OutOfRange(format!("crop [{start}, {}) outside padded length {total}", start + len)));
    }
    let crop = padded.slice(s![.., start..start + len, .., ..]);
    Ok(seq.with_coords(resize_time(crop, window)))
}

/// Reflection-pads by `T / padding_ratio` frames per side, takes a random
/// `T`-frame crop, and resamples it to `window` frames. A ratio of 0 means
/// no padding.
pub fn temporal_crop_pad<R: Rng>(
    seq: &SkeletonSequence,
    padding_ratio: usize,
    window: usize,
    rng: &mut R,
) -> Result<SkeletonSequence> {
    let t = seq.frames();
    if t < 2 {
        return Err(Error::DegenerateLength(t));
    }
    let pad = if padding_ratio == 0 { 0 } else { t / padding_ratio };
    let start = rng.random_range(0..=2 * pad);
    temporal_crop_pad_at(seq, pad, start, t, window)
}
