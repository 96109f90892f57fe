//! 2-D convolution over [B, C, H, W] maps with stride, symmetric padding,
//! and channel groups. Weights are laid out [Cout, Cin/groups, KH, KW].
//!
//! Every output element accumulates its products in a fixed (input channel,
//! kernel row, kernel column) order, so results are bitwise reproducible for
//! a given dtype regardless of the surrounding loop schedule.

use crate::error::{fmt_shape, Error, Result};
use crate::nn::pad::{copy_into_padded, crop_from_padded, pad_reflect};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// How out-of-range taps are filled when `padding > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Out-of-range taps read zero.
    Zeros,
    /// The border is mirrored (without repeating the edge sample) before the
    /// valid convolution runs.
    Reflect,
}

/// Convolution hyperparameters. `padding` is applied to all four sides.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub pad_mode: PadMode,
}

impl Default for Conv2d {
    fn default() -> Self {
        Self { stride: 1, padding: 0, groups: 1, pad_mode: PadMode::Zeros }
    }
}

/// Runs the convolution, recording it on the tape. `bias`, when present,
/// holds one value per output channel and is added after the products.
pub fn conv2d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    cfg: &Conv2d,
) -> Result<Var> {
    let (stride, padding, groups) = (cfg.stride, cfg.padding, cfg.groups);
    if stride == 0 || groups == 0 {
        return Err(Error::Config("convolution stride and groups must be at least 1".into()));
    }
    {
        let xv = tape.value(x);
        let wv = tape.value(weight);
        if xv.shape().len() != 4 || wv.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d expects [B, C, H, W] input and [Cout, Cin/groups, KH, KW] weight, got {} and {}",
                fmt_shape(xv.shape()),
                fmt_shape(wv.shape())
            )));
        }
        let cin = xv.shape()[1];
        let (cout, cipg) = (wv.shape()[0], wv.shape()[1]);
        if cin % groups != 0 || cout % groups != 0 || cipg * groups != cin {
            return Err(Error::Shape(format!(
                "conv2d channel layout is inconsistent: input {} channels, weight {} with {} groups",
                cin,
                fmt_shape(wv.shape()),
                groups
            )));
        }
        if let Some(b) = bias {
            let bs = tape.value(b).shape().to_vec();
            if bs != [cout] {
                return Err(Error::Shape(format!(
                    "conv2d bias must have shape [{cout}], got {}",
                    fmt_shape(&bs)
                )));
            }
        }
        let (h, w) = (xv.shape()[2], xv.shape()[3]);
        let (kh, kw) = (wv.shape()[2], wv.shape()[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::Shape(format!(
                "conv2d kernel {kh}x{kw} does not fit the {h}x{w} input with padding {padding}"
            )));
        }
    }
    if cfg.pad_mode == PadMode::Reflect && padding > 0 {
        let xp = pad_reflect(tape, x, [padding; 4])?;
        return conv2d_zero(tape, xp, weight, bias, stride, 0, groups);
    }
    conv2d_zero(tape, x, weight, bias, stride, padding, groups)
}

/// Valid/zero-padded convolution node. All shape checks have already run.
fn conv2d_zero<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Var> {
    let out = {
        let xv = tape.value(x);
        let wv = tape.value(weight);
        let bv = bias.map(|b| tape.value(b));
        forward_kernel(xv, wv, bv, stride, padding, groups)
    };
    let mut parents = vec![x, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    let has_bias = bias.is_some();
    Ok(tape.push_op(
        out,
        parents,
        Box::new(move |g, inputs, _y| {
            let (xv, wv) = (inputs[0], inputs[1]);
            let dx = backward_data(xv.shape(), wv, g, stride, padding, groups);
            let dw = backward_weight(xv, wv.shape(), g, stride, padding, groups);
            let mut grads = vec![Some(dx), Some(dw)];
            if has_bias {
                grads.push(Some(backward_bias(g)));
            }
            grads
        }),
    ))
}

fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Returns the input plane data, zero-padded when `padding > 0`.
fn padded_input<T: Scalar>(x: &Tensor<T>, padding: usize) -> (Vec<T>, usize, usize) {
    let (planes, h, w) = (x.shape()[0] * x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    let mut buf = vec![T::zero(); planes * ph * pw];
    copy_into_padded(x.data(), &mut buf, planes, h, w, ph, pw, padding, padding);
    (buf, ph, pw)
}

fn forward_kernel<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor<T> {
    let (bsz, cin) = (x.shape()[0], x.shape()[1]);
    let (cout, cipg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (xp, ph, pw) = if padding == 0 {
        (Vec::new(), x.shape()[2], x.shape()[3])
    } else {
        padded_input(x, padding)
    };
    let xp: &[T] = if padding == 0 { x.data() } else { &xp };
    let (oh, ow) = (out_extent(x.shape()[2], kh, stride, padding), out_extent(x.shape()[3], kw, stride, padding));
    let copg = cout / groups;
    let wd = w.data();
    let mut out = Tensor::zeros(&[bsz, cout, oh, ow]);
    let od = out.data_mut();
    for bi in 0..bsz {
        for co in 0..cout {
            let ci0 = (co / copg) * cipg;
            let obase = (bi * cout + co) * oh * ow;
            for cig in 0..cipg {
                let xbase = (bi * cin + ci0 + cig) * ph * pw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wd[((co * cipg + cig) * kh + ky) * kw + kx];
                        for oy in 0..oh {
                            let xrow = xbase + (oy * stride + ky) * pw + kx;
                            let orow = obase + oy * ow;
                            if stride == 1 {
                                for ox in 0..ow {
                                    od[orow + ox] += wv * xp[xrow + ox];
                                }
                            } else {
                                for ox in 0..ow {
                                    od[orow + ox] += wv * xp[xrow + ox * stride];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(b) = bias {
                let bv = b.data()[co];
                for v in od[obase..obase + oh * ow].iter_mut() {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Gradient with respect to the input: the transpose scatter of the forward
/// gather, accumulated in the padded frame and then cropped.
fn backward_data<T: Scalar>(
    x_shape: &[usize],
    w: &Tensor<T>,
    g: &Tensor<T>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor<T> {
    let (bsz, cin, h, wid) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (cout, cipg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (ph, pw) = (h + 2 * padding, wid + 2 * padding);
    let (oh, ow) = (g.shape()[2], g.shape()[3]);
    let copg = cout / groups;
    let wd = w.data();
    let gd = g.data();
    let mut dxp = vec![T::zero(); bsz * cin * ph * pw];
    for bi in 0..bsz {
        for co in 0..cout {
            let ci0 = (co / copg) * cipg;
            let gbase = (bi * cout + co) * oh * ow;
            for cig in 0..cipg {
                let xbase = (bi * cin + ci0 + cig) * ph * pw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wd[((co * cipg + cig) * kh + ky) * kw + kx];
                        for oy in 0..oh {
                            let xrow = xbase + (oy * stride + ky) * pw + kx;
                            let grow = gbase + oy * ow;
                            if stride == 1 {
                                for ox in 0..ow {
                                    dxp[xrow + ox] += wv * gd[grow + ox];
                                }
                            } else {
                                for ox in 0..ow {
                                    dxp[xrow + ox * stride] += wv * gd[grow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut dx = Tensor::zeros(x_shape);
    if padding == 0 {
        dx.data_mut().copy_from_slice(&dxp);
    } else {
        crop_from_padded(&dxp, dx.data_mut(), bsz * cin, h, wid, ph, pw, padding, padding);
    }
    dx
}

/// Gradient with respect to the weight: for each tap, the dot product of the
/// upstream gradient plane with the correspondingly shifted input plane.
fn backward_weight<T: Scalar>(
    x: &Tensor<T>,
    w_shape: &[usize],
    g: &Tensor<T>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor<T> {
    let (bsz, cin) = (x.shape()[0], x.shape()[1]);
    let (cout, cipg, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
    let (xp, ph, pw) = if padding == 0 {
        (Vec::new(), x.shape()[2], x.shape()[3])
    } else {
        padded_input(x, padding)
    };
    let xp: &[T] = if padding == 0 { x.data() } else { &xp };
    let (oh, ow) = (g.shape()[2], g.shape()[3]);
    let copg = cout / groups;
    let gd = g.data();
    let mut dw = Tensor::zeros(w_shape);
    let dwd = dw.data_mut();
    for bi in 0..bsz {
        for co in 0..cout {
            let ci0 = (co / copg) * cipg;
            let gbase = (bi * cout + co) * oh * ow;
            for cig in 0..cipg {
                let xbase = (bi * cin + ci0 + cig) * ph * pw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = T::zero();
                        for oy in 0..oh {
                            let xrow = xbase + (oy * stride + ky) * pw + kx;
                            let grow = gbase + oy * ow;
                            if stride == 1 {
                                for ox in 0..ow {
                                    acc += gd[grow + ox] * xp[xrow + ox];
                                }
                            } else {
                                for ox in 0..ow {
                                    acc += gd[grow + ox] * xp[xrow + ox * stride];
                                }
                            }
                        }
                        dwd[((co * cipg + cig) * kh + ky) * kw + kx] += acc;
                    }
                }
            }
        }
    }
    dw
}

/// Gradient with respect to the bias: the upstream gradient summed over
/// batch and space, one value per output channel.
fn backward_bias<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let (bsz, cout, oh, ow) = (g.shape()[0], g.shape()[1], g.shape()[2], g.shape()[3]);
    let gd = g.data();
    let mut db = Tensor::zeros(&[cout]);
    let dbd = db.data_mut();
    for bi in 0..bsz {
        for co in 0..cout {
            let base = (bi * cout + co) * oh * ow;
            let mut acc = T::zero();
            for i in 0..oh * ow {
                acc += gd[base + i];
            }
            dbd[co] += acc;
        }
    }
    db
}
