//! The restoration backbone's three operators and the two residual blocks
//! built from them:
//!
//! * channelwise attention that routes information across all channels at
//!   full spatial resolution ([`mdta_forward`]),
//! * windowed spatial attention whose keys and values come from enlarged,
//!   overlapping windows ([`oca_forward`]),
//! * a gated, depthwise-convolved feed-forward network ([`gdfn_forward`]).
//!
//! A transposed-attention block pairs the channelwise operator with the
//! feed-forward; a spatial-attention block pairs the windowed operator with
//! it. Both wrap each operator in a pre-norm residual branch.

mod block;
mod gdfn;
mod mdta;
mod oca;

pub use block::{
    ssab_forward, ssab_forward_traced, tsab_forward, tsab_forward_traced, LnParams, LnVars,
    SsabParams, SsabVars, TsabParams, TsabVars, LN_EPS,
};
pub use gdfn::{gdfn_forward, gdfn_hidden, GdfnParams, GdfnVars};
pub use mdta::{mdta_forward, MdtaParams, MdtaVars};
pub use oca::{oca_forward, relative_position_index, OcaParams, OcaVars};

/// Shared truncated-normal width for weight initialization.
pub(crate) const INIT_STD: f64 = 0.02;

/// Loop-level reference implementations used as oracles by the operator
/// tests. Deliberately written as direct definitions, independent of the
/// production kernels.
#[cfg(test)]
pub(crate) mod refimpl {
    use crate::tensor::Tensor;

    /// Per-pixel matrix multiply: [B, Ci, H, W] with [Co, Ci, 1, 1].
    pub fn conv1x1(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
        let (bs, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let co = w.shape()[0];
        assert_eq!(w.shape()[1], ci);
        let mut out = Tensor::zeros(&[bs, co, h, wd]);
        for bi in 0..bs {
            for o in 0..co {
                for p in 0..h * wd {
                    let mut acc = 0.0;
                    for i in 0..ci {
                        acc += x.data()[(bi * ci + i) * h * wd + p] * w.data()[o * ci + i];
                    }
                    if let Some(bias) = b {
                        acc += bias.data()[o];
                    }
                    out.data_mut()[(bi * co + o) * h * wd + p] = acc;
                }
            }
        }
        out
    }

    /// Depthwise 3x3 convolution with mirrored borders, one filter per
    /// channel: [B, C, H, W] with [C, 1, 3, 3].
    pub fn dwconv3x3_reflect(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
        let (bs, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        assert_eq!(w.shape(), &[c, 1, 3, 3]);
        let refl = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let r = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
            r as usize
        };
        let mut out = Tensor::zeros(x.shape());
        for bi in 0..bs {
            for ci in 0..c {
                let plane = (bi * c + ci) * h * wd;
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = 0.0;
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let iy = refl(y as isize + ky as isize - 1, h);
                                let ix = refl(xx as isize + kx as isize - 1, wd);
                                acc += x.data()[plane + iy * wd + ix]
                                    * w.data()[(ci * 3 + ky) * 3 + kx];
                            }
                        }
                        out.data_mut()[plane + y * wd + xx] = acc;
                    }
                }
            }
        }
        out
    }

    /// Softmax along the last axis of a flat row.
    pub fn softmax_row(row: &mut [f64]) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }

    pub fn gelu_exact(x: f64) -> f64 {
        0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
    }
}
