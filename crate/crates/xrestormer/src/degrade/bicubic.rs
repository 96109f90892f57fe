//! Antialiased bicubic downscaling, the reference convention of the
//! restoration evaluation ecosystem.
//!
//! Cubic convolution kernel with a = -0.5. For a downscale by factor `s`
//! the kernel is stretched by `s` (antialiasing), output sample `i` maps to
//! source coordinate `(i + 0.5) * s - 0.5`, source indices clamp at the
//! border (replicate), and each output's weights are renormalized to sum
//! to 1. The filter is separable: rows first, then columns; weights are
//! computed in f64 regardless of the element type.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Cubic convolution weight at offset `x` (kernel units), a = -0.5.
/// Support is (-2, 2); w(0) = 1 and w at other integers is 0, so the
/// kernel interpolates when unstretched.
pub(crate) fn cubic_weight(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

/// Tap positions and normalized weights for one output sample on an axis
/// of `len` source pixels downscaled by `s`.
fn taps(i: usize, s: usize, len: usize) -> (Vec<usize>, Vec<f64>) {
    let s = s as f64;
    let center = (i as f64 + 0.5) * s - 0.5;
    let radius = 2.0 * s;
    let lo = (center - radius).ceil() as isize;
    let hi = (center + radius).floor() as isize;
    let mut idx = Vec::with_capacity((hi - lo + 1) as usize);
    let mut w = Vec::with_capacity(idx.capacity());
    let mut total = 0.0;
    for j in lo..=hi {
        let weight = cubic_weight((center - j as f64) / s);
        if weight != 0.0 {
            idx.push(j.clamp(0, len as isize - 1) as usize);
            w.push(weight);
            total += weight;
        }
    }
    for weight in &mut w {
        *weight /= total;
    }
    (idx, w)
}

/// Downscales a [C, H, W] image by an integer factor with the antialiased
/// bicubic kernel. Both extents must divide by the scale.
pub fn degrade_sr<T: Scalar>(gt: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    if gt.shape().len() != 3 {
        return Err(Error::Shape(format!(
            "degrade_sr wants a [C, H, W] image, got {}",
            crate::error::fmt_shape(gt.shape())
        )));
    }
    if !matches!(scale, 2 | 4) {
        return Err(Error::Contract(format!("sr scale {scale} must be 2 or 4")));
    }
    let (c, h, w) = (gt.shape()[0], gt.shape()[1], gt.shape()[2]);
    if h % scale != 0 || w % scale != 0 {
        return Err(Error::Contract(format!(
            "extent {h}x{w} does not divide by the sr scale {scale}"
        )));
    }
    let (oh, ow) = (h / scale, w / scale);

    // rows: [C, H, W] -> [C, OH, W]
    let src = gt.data();
    let mut rows = vec![0.0f64; c * oh * w];
    for i in 0..oh {
        let (idx, wt) = taps(i, scale, h);
        for ch in 0..c {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, weight) in idx.iter().zip(&wt) {
                    acc += weight * src[(ch * h + j) * w + x].as_f64();
                }
                rows[(ch * oh + i) * w + x] = acc;
            }
        }
    }

    // columns: [C, OH, W] -> [C, OH, OW]
    let mut out = vec![T::zero(); c * oh * ow];
    for i in 0..ow {
        let (idx, wt) = taps(i, scale, w);
        for ch in 0..c {
            for y in 0..oh {
                let mut acc = 0.0;
                for (j, weight) in idx.iter().zip(&wt) {
                    acc += weight * rows[(ch * oh + y) * w + j];
                }
                out[(ch * oh + y) * ow + i] = T::from_f64(acc);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}
