//! Stochastic and warp-based degradations: Gaussian noise, motion blur,
//! rain streaks, and haze.
//!
//! All internal arithmetic runs in f64 and casts once on write, and every
//! random draw comes from a seeded generator in a fixed order, so outputs
//! are bitwise-reproducible per spec.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::{line_trajectory, DepthField, HazeParams, RainParams};
use crate::error::{Error, Result};
use crate::nn::bilinear_resize;
use crate::tensor::{randn, Scalar, Tensor};

fn check_image<T: Scalar>(img: &Tensor<T>, op: &str) -> Result<(usize, usize, usize)> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!(
            "{op} wants a [C, H, W] image, got {}",
            crate::error::fmt_shape(s)
        )));
    }
    Ok((s[0], s[1], s[2]))
}

/// Adds i.i.d. Gaussian noise N(0, (sigma/255)²) per pixel and channel.
/// The sum is NOT clipped: restoration operates on the unclipped signal.
/// `sigma` is on the 0-255 scale; 0 is the identity.
pub fn degrade_noise<T: Scalar>(gt: &Tensor<T>, sigma: f64, seed: u64) -> Result<Tensor<T>> {
    check_image(gt, "degrade_noise")?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Contract(format!("noise sigma {sigma} must be non-negative")));
    }
    let noise = randn::<T>(gt.shape(), 0.0, sigma / 255.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let out: Vec<T> = gt
        .data()
        .iter()
        .zip(noise.data())
        .map(|(a, n)| T::from_f64(a.as_f64() + n.as_f64()))
        .collect();
    Tensor::new(gt.shape().to_vec(), out)
}

/// Reads `src` at the sub-pixel position (y, x) with bilinear blending;
/// coordinates outside the image replicate the border.
fn sample_bilinear(data: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |yy: isize, xx: isize| data[clamp(yy, h) * w + clamp(xx, w)];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Accumulates `plane` warped by each (dx, dy) offset into a fresh buffer;
/// the caller owns normalization.
fn sum_warped(plane: &[f64], h: usize, w: usize, offsets: &[(f64, f64)]) -> Vec<f64> {
    let mut acc = vec![0.0f64; h * w];
    for &(dx, dy) in offsets {
        if dx == 0.0 && dy == 0.0 {
            for (a, v) in acc.iter_mut().zip(plane) {
                *a += v;
            }
            continue;
        }
        for y in 0..h {
            for x in 0..w {
                acc[y * w + x] += sample_bilinear(plane, h, w, y as f64 + dy, x as f64 + dx);
            }
        }
    }
    acc
}

/// Motion blur: the mean of bilinearly warped copies of the image, one per
/// trajectory offset. A normalized point-spread function by construction,
/// so constant images pass through unchanged.
pub fn degrade_blur<T: Scalar>(gt: &Tensor<T>, trajectory: &[(f64, f64)]) -> Result<Tensor<T>> {
    let (c, h, w) = check_image(gt, "degrade_blur")?;
    if trajectory.is_empty() {
        return Err(Error::Contract("blur trajectory must be non-empty".into()));
    }
    let mut out = Vec::with_capacity(c * h * w);
    let inv_n = 1.0 / trajectory.len() as f64;
    for ch in 0..c {
        let plane: Vec<f64> =
            gt.data()[ch * h * w..(ch + 1) * h * w].iter().map(|v| v.as_f64()).collect();
        let acc = sum_warped(&plane, h, w, trajectory);
        out.extend(acc.into_iter().map(|v| T::from_f64(v * inv_n)));
    }
    Tensor::new(vec![c, h, w], out)
}

/// The additive rain layer on its own: sparse droplets (Bernoulli per
/// pixel, random brightness in [0.5, 1]) smeared along an oriented line of
/// unit-spaced taps and scaled by the intensity. Non-negative everywhere.
pub fn rain_streak_map<T: Scalar>(h: usize, w: usize, rain: &RainParams) -> Tensor<T> {
    let rng = &mut ChaCha8Rng::seed_from_u64(rain.seed);
    let mut droplets = vec![0.0f64; h * w];
    for d in droplets.iter_mut() {
        if rng.gen::<f64>() < rain.density {
            *d = 0.5 + 0.5 * rng.gen::<f64>();
        }
    }
    let taps = rain.length.round().max(1.0) as usize;
    let offsets = line_trajectory(rain.angle_deg, (taps - 1) as f64, taps);
    let streaks = sum_warped(&droplets, h, w, &offsets);
    Tensor::from_fn(&[h, w], |i| T::from_f64(streaks[i] * rain.intensity))
}

/// Rain: adds the streak map to every channel and clips back to [0, 1].
/// Expects the input in [0, 1]; intensity 0 is then the identity.
pub fn degrade_rain<T: Scalar>(gt: &Tensor<T>, rain: &RainParams) -> Result<Tensor<T>> {
    let (c, h, w) = check_image(gt, "degrade_rain")?;
    let streaks = rain_streak_map::<T>(h, w, rain);
    let out: Vec<T> = gt
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| T::from_f64((v.as_f64() + streaks.data()[i % (h * w)].as_f64()).clamp(0.0, 1.0)))
        .collect();
    Tensor::new(vec![c, h, w], out)
}

/// Realizes a depth field at the image extent, in f64.
fn depth_plane(h: usize, w: usize, haze: &HazeParams) -> Vec<f64> {
    match haze.depth {
        DepthField::Constant(v) => vec![v; h * w],
        DepthField::Ramp { near, far } => {
            let mut d = vec![0.0; h * w];
            for y in 0..h {
                let t = if h > 1 { y as f64 / (h - 1) as f64 } else { 0.0 };
                let v = near + (far - near) * t;
                d[y * w..(y + 1) * w].fill(v);
            }
            d
        }
        DepthField::Smooth { near, far } => {
            let rng = &mut ChaCha8Rng::seed_from_u64(haze.seed);
            let grid = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |_| rng.gen::<f64>());
            let field = bilinear_resize(&grid, h, w).expect("grid resize cannot fail");
            field.data().iter().map(|v| near + (far - near) * v).collect()
        }
    }
}

/// Haze: per-pixel transmission `t = exp(-beta * depth)` mixes the image
/// toward the atmospheric light, `out = gt * t + A * (1 - t)`, broadcast
/// over channels.
pub fn degrade_haze<T: Scalar>(gt: &Tensor<T>, haze: &HazeParams) -> Result<Tensor<T>> {
    let (c, h, w) = check_image(gt, "degrade_haze")?;
    if !(haze.beta > 0.0 && haze.beta.is_finite()) {
        return Err(Error::Contract(format!("haze beta {} must be positive", haze.beta)));
    }
    let depth = depth_plane(h, w, haze);
    let trans: Vec<f64> = depth.iter().map(|d| (-haze.beta * d).exp()).collect();
    let out: Vec<T> = gt
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let t = trans[i % (h * w)];
            T::from_f64(v.as_f64() * t + haze.atmosphere * (1.0 - t))
        })
        .collect();
    Tensor::new(vec![c, h, w], out)
}
