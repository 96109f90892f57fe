//! Gated feed-forward network. Expands the channels, mixes a local 3x3
//! depthwise neighbourhood, then multiplies a GELU-gated half against the
//! other half before projecting back down. The gate lets each position
//! suppress or pass the locally aggregated features.

use rand::Rng;

use crate::attention::INIT_STD;
use crate::error::Result;
use crate::nn::{conv2d, Conv2d, PadMode};
use crate::tensor::{trunc_normal, Scalar, Tape, Tensor, Var};

/// Parameters of one gated feed-forward network.
///
/// The hidden width is `floor(channels * expansion)`. Both the expansion
/// projection and the depthwise mix run at twice that width so the tensor
/// can be halved into a gate branch and a value branch.
#[derive(Debug, Clone)]
pub struct GdfnParams<T: Scalar> {
    /// [2 * hidden, C, 1, 1]
    pub in_w: Tensor<T>,
    /// [2 * hidden, 1, 3, 3], one filter per expanded channel.
    pub dw_w: Tensor<T>,
    /// [C, hidden, 1, 1]
    pub out_w: Tensor<T>,
    pub hidden: usize,
}

/// Tape handles for [`GdfnParams`], produced once per forward build.
#[derive(Debug, Clone, Copy)]
pub struct GdfnVars {
    pub in_w: Var,
    pub dw_w: Var,
    pub out_w: Var,
    pub hidden: usize,
}

/// Hidden width for a channel count and expansion factor.
pub fn gdfn_hidden(channels: usize, expansion: f64) -> usize {
    (channels as f64 * expansion) as usize
}

impl<T: Scalar> GdfnParams<T> {
    /// Fresh parameters. Tensors are sampled in declaration order so a
    /// seeded generator reproduces the same values.
    pub fn init(channels: usize, expansion: f64, rng: &mut impl Rng) -> Self {
        let hidden = gdfn_hidden(channels, expansion);
        Self {
            in_w: trunc_normal(&[2 * hidden, channels, 1, 1], INIT_STD, rng),
            dw_w: trunc_normal(&[2 * hidden, 1, 3, 3], INIT_STD, rng),
            out_w: trunc_normal(&[channels, hidden, 1, 1], INIT_STD, rng),
            hidden,
        }
    }

    pub fn num_params(&self) -> usize {
        self.in_w.numel() + self.dw_w.numel() + self.out_w.numel()
    }

    /// Registers every tensor as a trainable leaf, appending the handles to
    /// `order` in the same sequence `visit` reports them.
    pub fn register(&self, tape: &mut Tape<T>, order: &mut Vec<Var>) -> GdfnVars {
        let vars = GdfnVars {
            in_w: tape.leaf(&self.in_w),
            dw_w: tape.leaf(&self.dw_w),
            out_w: tape.leaf(&self.out_w),
            hidden: self.hidden,
        };
        order.extend([vars.in_w, vars.dw_w, vars.out_w]);
        vars
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{prefix}.in_w"), &self.in_w);
        f(format!("{prefix}.dw_w"), &self.dw_w);
        f(format!("{prefix}.out_w"), &self.out_w);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}.in_w"), &mut self.in_w);
        f(format!("{prefix}.dw_w"), &mut self.dw_w);
        f(format!("{prefix}.out_w"), &mut self.out_w);
    }
}

/// Applies the gated feed-forward network to a [B, C, H, W] map.
pub fn gdfn_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &GdfnVars) -> Result<Var> {
    let hidden = p.hidden;
    let expanded = conv2d(tape, x, p.in_w, None, &Conv2d::default())?;
    let mixed = conv2d(
        tape,
        expanded,
        p.dw_w,
        None,
        &Conv2d { padding: 1, groups: 2 * hidden, pad_mode: PadMode::Reflect, ..Conv2d::default() },
    )?;
    let shape = tape.value(mixed).shape().to_vec();
    let (b, h, w) = (shape[0], shape[2], shape[3]);
    let gate = tape.slice(mixed, &[0, 0, 0, 0], &[b, hidden, h, w])?;
    let value = tape.slice(mixed, &[0, hidden, 0, 0], &[b, hidden, h, w])?;
    let gated = tape.gelu(gate);
    let prod = tape.mul(gated, value)?;
    conv2d(tape, prod, p.out_w, None, &Conv2d::default())
}
