//! Channelwise self-attention. Queries, keys, and values come from a 1x1
//! projection followed by a 3x3 depthwise convolution; attention is then
//! computed between channels rather than pixels, so the map stays at full
//! resolution while the cost grows with the square of the per-head channel
//! count instead of the pixel count. Query and key channels are L2
//! normalized over space and their dot products scaled by a learned
//! per-head temperature before the softmax.

use rand::Rng;

use crate::attention::INIT_STD;
use crate::error::{Error, Result};
use crate::nn::{conv2d, Conv2d, PadMode};
use crate::tensor::{trunc_normal, Scalar, Tape, Tensor, Var};

/// Parameters of one channelwise attention operator.
#[derive(Debug, Clone)]
pub struct MdtaParams<T: Scalar> {
    /// Per-head softmax temperature, multiplied into the logits. [heads]
    pub temperature: Tensor<T>,
    /// Joint query/key/value point projection. [3C, C, 1, 1]
    pub qkv_w: Tensor<T>,
    /// Depthwise 3x3 mix over the joint projection. [3C, 1, 3, 3]
    pub qkv_dw_w: Tensor<T>,
    /// Output point projection. [C, C, 1, 1]
    pub proj_w: Tensor<T>,
    pub heads: usize,
}

/// Tape handles for [`MdtaParams`].
#[derive(Debug, Clone, Copy)]
pub struct MdtaVars {
    pub temperature: Var,
    pub qkv_w: Var,
    pub qkv_dw_w: Var,
    pub proj_w: Var,
    pub heads: usize,
}

impl<T: Scalar> MdtaParams<T> {
    pub fn init(channels: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && channels % heads == 0, "channels must split evenly over heads");
        Self {
            temperature: Tensor::full(&[heads], T::one()),
            qkv_w: trunc_normal(&[3 * channels, channels, 1, 1], INIT_STD, rng),
            qkv_dw_w: trunc_normal(&[3 * channels, 1, 3, 3], INIT_STD, rng),
            proj_w: trunc_normal(&[channels, channels, 1, 1], INIT_STD, rng),
            heads,
        }
    }

    pub fn num_params(&self) -> usize {
        self.temperature.numel() + self.qkv_w.numel() + self.qkv_dw_w.numel() + self.proj_w.numel()
    }

    pub fn register(&self, tape: &mut Tape<T>, order: &mut Vec<Var>) -> MdtaVars {
        let vars = MdtaVars {
            temperature: tape.leaf(&self.temperature),
            qkv_w: tape.leaf(&self.qkv_w),
            qkv_dw_w: tape.leaf(&self.qkv_dw_w),
            proj_w: tape.leaf(&self.proj_w),
            heads: self.heads,
        };
        order.extend([vars.temperature, vars.qkv_w, vars.qkv_dw_w, vars.proj_w]);
        vars
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{prefix}.temperature"), &self.temperature);
        f(format!("{prefix}.qkv_w"), &self.qkv_w);
        f(format!("{prefix}.qkv_dw_w"), &self.qkv_dw_w);
        f(format!("{prefix}.proj_w"), &self.proj_w);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}.temperature"), &mut self.temperature);
        f(format!("{prefix}.qkv_w"), &mut self.qkv_w);
        f(format!("{prefix}.qkv_dw_w"), &mut self.qkv_dw_w);
        f(format!("{prefix}.proj_w"), &mut self.proj_w);
    }
}

/// Runs channelwise attention on a [B, C, H, W] map. Returns the output map
/// and the [B, heads, C/heads, C/heads] attention matrix (useful for
/// checking that every softmax row is a probability distribution).
pub fn mdta_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &MdtaVars) -> Result<(Var, Var)> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!(
            "channelwise attention expects [B, C, H, W], got {}",
            crate::error::fmt_shape(&s)
        )));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let heads = p.heads;
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!(
            "channel count {c} does not split over {heads} heads"
        )));
    }
    let qkv = conv2d(tape, x, p.qkv_w, None, &Conv2d::default())?;
    let qkv = conv2d(
        tape,
        qkv,
        p.qkv_dw_w,
        None,
        &Conv2d { padding: 1, groups: 3 * c, pad_mode: PadMode::Reflect, ..Conv2d::default() },
    )?;
    let q = tape.slice(qkv, &[0, 0, 0, 0], &[b, c, h, w])?;
    let k = tape.slice(qkv, &[0, c, 0, 0], &[b, c, h, w])?;
    let v = tape.slice(qkv, &[0, 2 * c, 0, 0], &[b, c, h, w])?;
    // Heads split the channel axis; flattening space to one axis keeps the
    // layout contiguous, so these are pure reshapes.
    let cp = c / heads;
    let hw = h * w;
    let q = tape.reshape(q, &[b, heads, cp, hw])?;
    let k = tape.reshape(k, &[b, heads, cp, hw])?;
    let v = tape.reshape(v, &[b, heads, cp, hw])?;
    let qn = tape.l2_normalize_last(q)?;
    let kn = tape.l2_normalize_last(k)?;
    let logits = tape.matmul_tt(qn, kn, false, true)?;
    let scaled = tape.head_scale(logits, p.temperature)?;
    let attn = tape.softmax(scaled, 3)?;
    let out = tape.matmul(attn, v)?;
    let out = tape.reshape(out, &[b, c, h, w])?;
    let out = conv2d(tape, out, p.proj_w, None, &Conv2d::default())?;
    Ok((out, attn))
}
