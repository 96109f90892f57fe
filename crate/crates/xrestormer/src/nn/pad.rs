//! Spatial padding for [B, C, H, W] maps. Pad amounts are given as
//! [top, bottom, left, right].

use crate::error::{fmt_shape, Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

fn check_rank4<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<()> {
    if x.shape().len() != 4 {
        return Err(Error::Shape(format!(
            "{what} expects a [B, C, H, W] input, got {}",
            fmt_shape(x.shape())
        )));
    }
    Ok(())
}

/// Zero-pads the spatial axes. The gradient is the centre crop of the
/// upstream gradient.
pub fn pad_zero<T: Scalar>(tape: &mut Tape<T>, x: Var, pads: [usize; 4]) -> Result<Var> {
    let xv = tape.value(x);
    check_rank4(xv, "pad_zero")?;
    let [b, c, h, w] = [xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]];
    let [pt, pb, pl, pr] = pads;
    let (oh, ow) = (h + pt + pb, w + pl + pr);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    copy_into_padded(xv.data(), out.data_mut(), b * c, h, w, oh, ow, pt, pl);
    Ok(tape.push_op(
        out,
        vec![x],
        Box::new(move |g, inputs, _y| {
            let xs = inputs[0].shape();
            let (h, w) = (xs[2], xs[3]);
            let mut dx = Tensor::zeros(xs);
            crop_from_padded(g.data(), dx.data_mut(), xs[0] * xs[1], h, w, h + pt + pb, w + pl + pr, pt, pl);
            vec![Some(dx)]
        }),
    ))
}

/// Reflect-pads the spatial axes without repeating the border sample, so a
/// pad of 1 on a row `[a, b, c]` yields `[b, a, b, c, b]`. Each pad amount
/// must be strictly smaller than the corresponding spatial extent. The
/// gradient scatter-adds back through the same index map, so border samples
/// that were read twice receive the sum of both contributions.
pub fn pad_reflect<T: Scalar>(tape: &mut Tape<T>, x: Var, pads: [usize; 4]) -> Result<Var> {
    let xv = tape.value(x);
    check_rank4(xv, "pad_reflect")?;
    let [b, c, h, w] = [xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]];
    let [pt, pb, pl, pr] = pads;
    if pt >= h || pb >= h || pl >= w || pr >= w {
        return Err(Error::Shape(format!(
            "reflect pad [{pt}, {pb}, {pl}, {pr}] needs every amount below the {h}x{w} extent it mirrors"
        )));
    }
    let (oh, ow) = (h + pt + pb, w + pl + pr);
    let ys: Vec<usize> = (0..oh).map(|oy| reflect_index(oy, pt, h)).collect();
    let xs_map: Vec<usize> = (0..ow).map(|ox| reflect_index(ox, pl, w)).collect();
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    {
        let src = xv.data();
        let dst = out.data_mut();
        for p in 0..b * c {
            let sp = p * h * w;
            let dp = p * oh * ow;
            for oy in 0..oh {
                let srow = sp + ys[oy] * w;
                let drow = dp + oy * ow;
                for ox in 0..ow {
                    dst[drow + ox] = src[srow + xs_map[ox]];
                }
            }
        }
    }
    Ok(tape.push_op(
        out,
        vec![x],
        Box::new(move |g, inputs, _y| {
            let s = inputs[0].shape();
            let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
            let (oh, ow) = (h + pt + pb, w + pl + pr);
            let mut dx = Tensor::zeros(s);
            let gd = g.data();
            let dd = dx.data_mut();
            for p in 0..planes {
                let gp = p * oh * ow;
                let dp = p * h * w;
                for oy in 0..oh {
                    let drow = dp + reflect_index(oy, pt, h) * w;
                    let grow = gp + oy * ow;
                    for ox in 0..ow {
                        dd[drow + reflect_index(ox, pl, w)] += gd[grow + ox];
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// Maps a padded coordinate back to a source coordinate by mirroring about
/// the first and last samples.
fn reflect_index(padded: usize, pad_before: usize, extent: usize) -> usize {
    let i = padded as isize - pad_before as isize;
    let n = extent as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

pub(crate) fn copy_into_padded<T: Scalar>(
    src: &[T],
    dst: &mut [T],
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    pt: usize,
    pl: usize,
) {
    for p in 0..planes {
        let sp = p * h * w;
        let dp = p * oh * ow;
        for y in 0..h {
            let srow = sp + y * w;
            let drow = dp + (y + pt) * ow + pl;
            dst[drow..drow + w].copy_from_slice(&src[srow..srow + w]);
        }
    }
}

pub(crate) fn crop_from_padded<T: Scalar>(
    src: &[T],
    dst: &mut [T],
    planes: usize,
    h: usize,
    w: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    pl: usize,
) {
    debug_assert!(sh >= h + pt && sw >= w + pl);
    for p in 0..planes {
        let sp = p * sh * sw;
        let dp = p * h * w;
        for y in 0..h {
            let srow = sp + (y + pt) * sw + pl;
            let drow = dp + y * w;
            dst[drow..drow + w].copy_from_slice(&src[srow..srow + w]);
        }
    }
}
