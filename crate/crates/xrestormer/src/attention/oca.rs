//! Windowed spatial attention with overlapping key/value windows. Queries
//! come from non-overlapping m x m tiles; keys and values come from larger
//! tiles centred on the same grid cells, so every query can attend a margin
//! beyond its own window and neighbouring windows exchange information in a
//! single pass. A learned bias, indexed by the relative offset between
//! query and key positions, is added to the logits before the softmax.

use rand::Rng;

use crate::attention::INIT_STD;
use crate::error::{Error, Result};
use crate::nn::window::overlap_extent;
use crate::nn::{conv2d, overlapping_window_partition, window_partition, window_reverse, Conv2d};
use crate::tensor::{trunc_normal, Scalar, Tape, Tensor, Var};

/// Parameters of one overlapping-window spatial attention operator.
#[derive(Debug, Clone)]
pub struct OcaParams<T: Scalar> {
    /// Joint query/key/value point projection. [3C, C, 1, 1]
    pub qkv_w: Tensor<T>,
    /// Bias of the joint projection. [3C]
    pub qkv_b: Tensor<T>,
    /// Relative-position bias table, one row per distinct offset between a
    /// query position and an enlarged-window key position, one column per
    /// head. [(m + mo - 1)^2, heads]
    pub rel_bias: Tensor<T>,
    /// Output point projection. [C, C, 1, 1]
    pub proj_w: Tensor<T>,
    pub heads: usize,
    pub window: usize,
    pub overlap: f64,
}

/// Tape handles for [`OcaParams`].
#[derive(Debug, Clone, Copy)]
pub struct OcaVars {
    pub qkv_w: Var,
    pub qkv_b: Var,
    pub rel_bias: Var,
    pub proj_w: Var,
    pub heads: usize,
    pub window: usize,
    pub overlap: f64,
}

impl<T: Scalar> OcaParams<T> {
    pub fn init(
        channels: usize,
        heads: usize,
        window: usize,
        overlap: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        assert!(heads > 0 && channels % heads == 0, "channels must split evenly over heads");
        let (mo, _) = overlap_extent(window, overlap)?;
        let span = window + mo - 1;
        Ok(Self {
            qkv_w: trunc_normal(&[3 * channels, channels, 1, 1], INIT_STD, rng),
            qkv_b: Tensor::zeros(&[3 * channels]),
            rel_bias: trunc_normal(&[span * span, heads], INIT_STD, rng),
            proj_w: trunc_normal(&[channels, channels, 1, 1], INIT_STD, rng),
            heads,
            window,
            overlap,
        })
    }

    pub fn num_params(&self) -> usize {
        self.qkv_w.numel() + self.qkv_b.numel() + self.rel_bias.numel() + self.proj_w.numel()
    }

    pub fn register(&self, tape: &mut Tape<T>, order: &mut Vec<Var>) -> OcaVars {
        let vars = OcaVars {
            qkv_w: tape.leaf(&self.qkv_w),
            qkv_b: tape.leaf(&self.qkv_b),
            rel_bias: tape.leaf(&self.rel_bias),
            proj_w: tape.leaf(&self.proj_w),
            heads: self.heads,
            window: self.window,
            overlap: self.overlap,
        };
        order.extend([vars.qkv_w, vars.qkv_b, vars.rel_bias, vars.proj_w]);
        vars
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{prefix}.qkv_w"), &self.qkv_w);
        f(format!("{prefix}.qkv_b"), &self.qkv_b);
        f(format!("{prefix}.rel_bias"), &self.rel_bias);
        f(format!("{prefix}.proj_w"), &self.proj_w);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}.qkv_w"), &mut self.qkv_w);
        f(format!("{prefix}.qkv_b"), &mut self.qkv_b);
        f(format!("{prefix}.rel_bias"), &mut self.rel_bias);
        f(format!("{prefix}.proj_w"), &mut self.proj_w);
    }
}

/// Flat lookup indices into the relative-position bias table: for each of
/// the m^2 query positions crossed with the mo^2 enlarged-window positions,
/// the row holding that pair's (dy, dx) offset. Both axes are shifted by
/// m - 1 so indices start at zero; rows advance by dy, columns by dx.
pub fn relative_position_index(m: usize, mo: usize) -> Vec<usize> {
    let span = m + mo - 1;
    let mut idx = Vec::with_capacity(m * m * mo * mo);
    for i in 0..m * m {
        let (yi, xi) = (i / m, i % m);
        for j in 0..mo * mo {
            let (yj, xj) = (j / mo, j % mo);
            let r0 = yj + m - 1 - yi;
            let r1 = xj + m - 1 - xi;
            idx.push(r0 * span + r1);
        }
    }
    idx
}

/// Runs overlapping-window attention on a [B, C, H, W] map whose spatial
/// extents are divisible by the window size (callers pad beforehand).
/// Returns the output map and the [B*nW, heads, m^2, mo^2] attention.
pub fn oca_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &OcaVars) -> Result<(Var, Var)> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!(
            "windowed attention expects [B, C, H, W], got {}",
            crate::error::fmt_shape(&s)
        )));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (m, heads) = (p.window, p.heads);
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!(
            "channel count {c} does not split over {heads} heads"
        )));
    }
    let (mo, _) = overlap_extent(m, p.overlap)?;
    let qkv = conv2d(tape, x, p.qkv_w, Some(p.qkv_b), &Conv2d::default())?;
    let q = tape.slice(qkv, &[0, 0, 0, 0], &[b, c, h, w])?;
    let k = tape.slice(qkv, &[0, c, 0, 0], &[b, c, h, w])?;
    let v = tape.slice(qkv, &[0, 2 * c, 0, 0], &[b, c, h, w])?;
    let qw = window_partition(tape, q, m)?;
    let kw = overlapping_window_partition(tape, k, m, p.overlap)?;
    let vw = overlapping_window_partition(tape, v, m, p.overlap)?;
    let n = tape.value(qw).shape()[0];
    let cp = c / heads;
    let to_heads = |tape: &mut Tape<T>, t: Var, tokens: usize| -> Result<Var> {
        let r = tape.reshape(t, &[n, tokens, heads, cp])?;
        tape.permute(r, &[0, 2, 1, 3])
    };
    let qh = to_heads(tape, qw, m * m)?;
    let kh = to_heads(tape, kw, mo * mo)?;
    let vh = to_heads(tape, vw, mo * mo)?;
    let qs = tape.scale(qh, (cp as f64).powf(-0.5));
    let logits = tape.matmul_tt(qs, kh, false, true)?;
    let idx = relative_position_index(m, mo);
    let rows = tape.gather_rows(p.rel_bias, &idx)?;
    let rows = tape.reshape(rows, &[m * m, mo * mo, heads])?;
    let bias = tape.permute(rows, &[2, 0, 1])?;
    let biased = tape.add_bias_lead(logits, bias)?;
    let attn = tape.softmax(biased, 3)?;
    let out = tape.matmul(attn, vh)?;
    let out = tape.permute(out, &[0, 2, 1, 3])?;
    let out = tape.reshape(out, &[n, m * m, c])?;
    let map = window_reverse(tape, out, m, b, h, w)?;
    let proj = conv2d(tape, map, p.proj_w, None, &Conv2d::default())?;
    Ok((proj, attn))
}
