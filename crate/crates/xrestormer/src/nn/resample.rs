//! Resolution changes: lossless pixel shuffles that trade channels for
//! space on the tape, and bilinear interpolation for plain image resizing
//! outside the differentiated graph.

use crate::error::{fmt_shape, Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Moves each r x r spatial block into channels:
/// [B, C, H, W] -> [B, C*r*r, H/r, W/r].
pub fn pixel_unshuffle<T: Scalar>(tape: &mut Tape<T>, x: Var, r: usize) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!(
            "pixel_unshuffle expects a [B, C, H, W] input, got {}",
            fmt_shape(&s)
        )));
    }
    if r == 0 || s[2] % r != 0 || s[3] % r != 0 {
        return Err(Error::Shape(format!(
            "pixel_unshuffle needs {}x{} divisible by the block size {r}",
            s[2], s[3]
        )));
    }
    let (b, c, hc, wc) = (s[0], s[1], s[2] / r, s[3] / r);
    let mut out = Tensor::zeros(&[b, c * r * r, hc, wc]);
    {
        let src = tape.value(x).data();
        let dst = out.data_mut();
        walk_shuffle(b, c, hc, wc, r, |fine, coarse| dst[coarse] = src[fine]);
    }
    Ok(tape.push_op(
        out,
        vec![x],
        Box::new(move |g, inputs, _y| {
            let mut dx = Tensor::zeros(inputs[0].shape());
            let gd = g.data();
            let dd = dx.data_mut();
            walk_shuffle(b, c, hc, wc, r, |fine, coarse| dd[fine] = gd[coarse]);
            vec![Some(dx)]
        }),
    ))
}

/// Moves channel groups of r * r back into space:
/// [B, C, H, W] -> [B, C/(r*r), H*r, W*r]. Inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<T: Scalar>(tape: &mut Tape<T>, x: Var, r: usize) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!(
            "pixel_shuffle expects a [B, C, H, W] input, got {}",
            fmt_shape(&s)
        )));
    }
    if r == 0 || s[1] % (r * r) != 0 {
        return Err(Error::Shape(format!(
            "pixel_shuffle needs the channel count {} divisible by {}",
            s[1],
            r * r
        )));
    }
    let (b, c, hc, wc) = (s[0], s[1] / (r * r), s[2], s[3]);
    let mut out = Tensor::zeros(&[b, c, hc * r, wc * r]);
    {
        let src = tape.value(x).data();
        let dst = out.data_mut();
        walk_shuffle(b, c, hc, wc, r, |fine, coarse| dst[fine] = src[coarse]);
    }
    Ok(tape.push_op(
        out,
        vec![x],
        Box::new(move |g, inputs, _y| {
            let mut dx = Tensor::zeros(inputs[0].shape());
            let gd = g.data();
            let dd = dx.data_mut();
            walk_shuffle(b, c, hc, wc, r, |fine, coarse| dd[coarse] = gd[fine]);
            vec![Some(dx)]
        }),
    ))
}

/// Visits every index pair between the fine map [B, C, Hc*r, Wc*r] and the
/// coarse map [B, C*r*r, Hc, Wc]. Block offset (dy, dx) of fine position
/// (y*r+dy, x*r+dx) lands in coarse channel c*r*r + dy*r + dx.
fn walk_shuffle<F: FnMut(usize, usize)>(
    b: usize,
    c: usize,
    hc: usize,
    wc: usize,
    r: usize,
    mut visit: F,
) {
    let (hf, wf) = (hc * r, wc * r);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..hc {
                for dy in 0..r {
                    let fine_row = ((bi * c + ci) * hf + y * r + dy) * wf;
                    for x in 0..wc {
                        for dx in 0..r {
                            let fine = fine_row + x * r + dx;
                            let coarse =
                                ((bi * c * r * r + ci * r * r + dy * r + dx) * hc + y) * wc + x;
                            visit(fine, coarse);
                        }
                    }
                }
            }
        }
    }
}

/// Bilinear resize of a [B, C, H, W] map with half-pixel centre alignment
/// and clamped border reads. Interpolation runs in f64 so the result does
/// not depend on the storage dtype beyond the final rounding. This is a
/// plain function, not a tape operation; it prepares network inputs.
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!(
            "bilinear_resize expects a [B, C, H, W] input, got {}",
            fmt_shape(s)
        )));
    }
    if oh == 0 || ow == 0 {
        return Err(Error::Shape("bilinear_resize target extents must be positive".into()));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    // Per-axis taps: low index, high index, and the blend weight of the
    // high sample. Out-of-range taps clamp to the border sample.
    let taps = |n: usize, on: usize, scale: f64| -> Vec<(usize, usize, f64)> {
        (0..on)
            .map(|o| {
                let src = (o as f64 + 0.5) * scale - 0.5;
                let lo = src.floor();
                let f = src - lo;
                let i0 = (lo.max(0.0) as usize).min(n - 1);
                let i1 = ((lo + 1.0).max(0.0) as usize).min(n - 1);
                (i0, i1, f)
            })
            .collect()
    };
    let ty = taps(h, oh, sy);
    let tx = taps(w, ow, sx);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let od = out.data_mut();
    let xd = x.data();
    for p in 0..b * c {
        let sp = p * h * w;
        let dp = p * oh * ow;
        for oy in 0..oh {
            let (y0, y1, fy) = ty[oy];
            let (r0, r1) = (sp + y0 * w, sp + y1 * w);
            let drow = dp + oy * ow;
            for ox in 0..ow {
                let (x0, x1, fx) = tx[ox];
                let v00 = xd[r0 + x0].as_f64();
                let v01 = xd[r0 + x1].as_f64();
                let v10 = xd[r1 + x0].as_f64();
                let v11 = xd[r1 + x1].as_f64();
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                od[drow + ox] = T::from_f64(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(out)
}

/// Bilinear resize by a scale factor; target extents round to nearest.
pub fn bilinear_scale<T: Scalar>(x: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Config(format!("resize scale must be positive, got {scale}")));
    }
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!(
            "bilinear_scale expects a [B, C, H, W] input, got {}",
            fmt_shape(s)
        )));
    }
    let oh = (s[2] as f64 * scale).round().max(1.0) as usize;
    let ow = (s[3] as f64 * scale).round().max(1.0) as usize;
    bilinear_resize(x, oh, ow)
}
