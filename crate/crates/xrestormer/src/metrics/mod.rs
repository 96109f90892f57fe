//! Image quality metrics: PSNR and SSIM over [C, H, W] images in [0, 1],
//! with optional luma-channel evaluation and border cropping.
//!
//! Identical images have infinite PSNR; the +inf sentinel is returned
//! as-is and must be kept out of averages by the caller (benchmark reports
//! list such images separately). All arithmetic is f64.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How a metric call preprocesses its images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricConfig {
    /// Convert RGB to the luma channel first (the convention for
    /// super-resolution and deraining scores).
    pub use_y_channel: bool,
    /// Pixels to strip from every side first (the super-resolution
    /// convention crops by the scale).
    pub crop_border: usize,
}

impl MetricConfig {
    /// Full-image RGB evaluation: no conversion, no crop.
    pub fn rgb() -> Self {
        Self { use_y_channel: false, crop_border: 0 }
    }

    /// Luma-channel evaluation with a border crop.
    pub fn y_channel(crop_border: usize) -> Self {
        Self { use_y_channel: true, crop_border }
    }
}

/// Converts [3, H, W] RGB in [0, 1] to the [1, H, W] luma channel using
/// the studio-swing BT.601 weights: Y = (65.481 R + 128.553 G + 24.966 B
/// + 16) / 255, so black maps to 16/255 and white to 235/255.
pub fn rgb_to_y<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape(format!(
            "rgb_to_y wants [3, H, W], got {}",
            crate::error::fmt_shape(s)
        )));
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let data = img.data();
    Ok(Tensor::from_fn(&[1, h, w], |i| {
        let r = data[i].as_f64();
        let g = data[plane + i].as_f64();
        let b = data[2 * plane + i].as_f64();
        T::from_f64((65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0)
    }))
}

/// Applies the config's preprocessing and returns the f64 pixels of both
/// images plus the resulting geometry.
fn prepare<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    cfg: &MetricConfig,
    op: &str,
) -> Result<(Vec<f64>, Vec<f64>, usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: images differ, {} vs {}",
            crate::error::fmt_shape(a.shape()),
            crate::error::fmt_shape(b.shape())
        )));
    }
    if a.shape().len() != 3 {
        return Err(Error::Shape(format!(
            "{op} wants [C, H, W] images, got {}",
            crate::error::fmt_shape(a.shape())
        )));
    }
    let (a, b) = if cfg.use_y_channel { (rgb_to_y(a)?, rgb_to_y(b)?) } else { (a.clone(), b.clone()) };
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let crop = cfg.crop_border;
    if h <= 2 * crop || w <= 2 * crop {
        return Err(Error::Contract(format!(
            "{op}: cropping {crop} from every side of {h}x{w} leaves nothing"
        )));
    }
    let (ch, cw) = (h - 2 * crop, w - 2 * crop);
    let mut pa = Vec::with_capacity(c * ch * cw);
    let mut pb = Vec::with_capacity(c * ch * cw);
    for chan in 0..c {
        for y in 0..ch {
            for x in 0..cw {
                let i = (chan * h + y + crop) * w + x + crop;
                pa.push(a.data()[i].as_f64());
                pb.push(b.data()[i].as_f64());
            }
        }
    }
    Ok((pa, pb, c, ch, cw))
}

/// Peak signal-to-noise ratio in dB for a data range of 1. Identical
/// images return +inf; keep that sentinel out of averages.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, cfg: &MetricConfig) -> Result<f64> {
    let (pa, pb, ..) = prepare(a, b, cfg, "psnr")?;
    let mse: f64 =
        pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / pa.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Edge of the SSIM window.
const SSIM_WINDOW: usize = 11;
/// Deviation of the Gaussian window.
const SSIM_SIGMA: f64 = 1.5;
/// Stabilizers (K1 L)² and (K2 L)² with K1 = 0.01, K2 = 0.03, L = 1.
const SSIM_C1: f64 = 1e-4;
const SSIM_C2: f64 = 9e-4;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut total = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            total += v;
        }
    }
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Structural similarity: mean local SSIM over every fully-contained
/// 11x11 Gaussian window (valid region, no padding), averaged over
/// channels. Symmetric in its arguments; 1 exactly when the images match.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, cfg: &MetricConfig) -> Result<f64> {
    let (pa, pb, c, h, w) = prepare(a, b, cfg, "ssim")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} after cropping, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for chan in 0..c {
        let pa = &pa[chan * h * w..(chan + 1) * h * w];
        let pb = &pb[chan * h * w..(chan + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let g = win[ky * SSIM_WINDOW + kx];
                        let x = pa[(oy + ky) * w + ox + kx];
                        let y = pb[(oy + ky) * w + ox + kx];
                        mx += g * x;
                        my += g * y;
                        xx += g * x * x;
                        yy += g * y * y;
                        xy += g * x * y;
                    }
                }
                let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
                let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
                total += num / den;
            }
        }
    }
    Ok(total / (c * oh * ow) as f64)
}
