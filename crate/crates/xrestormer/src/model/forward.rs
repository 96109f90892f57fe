//! The restoration forward pass: a four-level U-shape over block pairs.
//!
//! ```text
//! input -> mirror pad to a multiple of 8 -> 3x3 conv
//!   enc0 ----------------------------------------------> concat -> dec0
//!     down                                             up            refine
//!       enc1 ----------------------------> concat -> 1x1 -> dec1       3x3 conv
//!         down                           up                          + padded input
//!           enc2 ----------> concat -> 1x1 -> dec2                  crop -> output
//!             down         up
//!               latent ----'
//! ```
//!
//! Downsampling is a channel-halving 3x3 conv followed by a 2x pixel
//! unshuffle (2x channels, half resolution); upsampling is the mirror
//! image. Skip connections concatenate on channels; the two deeper ones are
//! folded back to the level width by a 1x1 conv, the finest is kept at
//! double width. The network predicts a residual added to its input.

use crate::error::{Error, Result};
use crate::model::config::TaskMode;
use crate::model::state::{ModelState, ModelVars, PairVars, SecondVars};
use crate::nn::{
    bilinear_scale, conv2d, pad_reflect, pixel_shuffle, pixel_unshuffle, Conv2d, PadMode,
};
use crate::attention::{ssab_forward_traced, tsab_forward_traced};
use crate::error::fmt_shape;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Spatial extents must divide by this after padding: three 2x
/// downsamplings.
pub const PAD_MULTIPLE: usize = 8;

/// Smallest accepted input side. Guarantees the mirror pad stays below the
/// input extent and the bottleneck keeps at least 2 pixels per side, which
/// the reflect-padded 3x3 convs inside blocks require.
pub const MIN_SIDE: usize = PAD_MULTIPLE + 1;

/// Attention matrices recorded during a forward pass, labeled
/// `stage.pair.block` in execution order (e.g. `latent.2.b`).
pub type AttnTrace = Vec<(String, Var)>;

fn conv3<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var) -> Result<Var> {
    conv2d(tape, x, w, None, &Conv2d { padding: 1, pad_mode: PadMode::Reflect, ..Conv2d::default() })
}

fn conv1<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var) -> Result<Var> {
    conv2d(tape, x, w, None, &Conv2d::default())
}

/// Halves resolution: channel-halving 3x3 conv, then 2x pixel unshuffle.
/// Net effect on [B, C, H, W] is [B, 2C, H/2, W/2].
fn down<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var) -> Result<Var> {
    let y = conv3(tape, x, w)?;
    pixel_unshuffle(tape, y, 2)
}

/// Doubles resolution: channel-doubling 3x3 conv, then 2x pixel shuffle.
/// Net effect on [B, C, H, W] is [B, C/2, 2H, 2W].
fn up<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var) -> Result<Var> {
    let y = conv3(tape, x, w)?;
    pixel_shuffle(tape, y, 2)
}

fn run_stage<T: Scalar>(
    tape: &mut Tape<T>,
    mut x: Var,
    stage: &[PairVars],
    name: &str,
    trace: &mut AttnTrace,
) -> Result<Var> {
    for (i, pair) in stage.iter().enumerate() {
        let (y, attn) = tsab_forward_traced(tape, x, &pair.a)?;
        trace.push((format!("{name}.{i}.a"), attn));
        let (y, attn) = match &pair.b {
            SecondVars::Spatial(p) => ssab_forward_traced(tape, y, p)?,
            SecondVars::Transposed(p) => tsab_forward_traced(tape, y, p)?,
        };
        trace.push((format!("{name}.{i}.b"), attn));
        x = y;
    }
    Ok(x)
}

/// Runs the network on a [B, in_channels, H, W] map. Any H and W of at
/// least [`MIN_SIDE`] are accepted: the input is mirror-padded on the
/// bottom and right to a multiple of [`PAD_MULTIPLE`] and the result
/// cropped back.
pub fn forward<T: Scalar>(tape: &mut Tape<T>, m: &ModelVars, input: Var) -> Result<Var> {
    Ok(forward_traced(tape, m, input)?.0)
}

/// Like [`forward`], also returning every attention matrix by stage name.
pub fn forward_traced<T: Scalar>(
    tape: &mut Tape<T>,
    m: &ModelVars,
    input: Var,
) -> Result<(Var, AttnTrace)> {
    let cfg = &m.config;
    let shape = tape.value(input).shape().to_vec();
    if shape.len() != 4 || shape[1] != cfg.in_channels {
        return Err(Error::Shape(format!(
            "model input must be [B, {}, H, W], got {}",
            cfg.in_channels,
            fmt_shape(&shape)
        )));
    }
    let (b, h, w) = (shape[0], shape[2], shape[3]);
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::Shape(format!(
            "input extent {h}x{w} is too small; both sides must be at least {MIN_SIDE}"
        )));
    }
    let (ph, pw) = (h.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE, w.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE);
    let padded = if (ph, pw) == (h, w) {
        input
    } else {
        pad_reflect(tape, input, [0, ph - h, 0, pw - w])?
    };

    let mut trace = AttnTrace::new();
    let x = conv3(tape, padded, m.input_proj)?;
    let e0 = run_stage(tape, x, &m.enc0, "enc0", &mut trace)?;
    let x = down(tape, e0, m.down0)?;
    let e1 = run_stage(tape, x, &m.enc1, "enc1", &mut trace)?;
    let x = down(tape, e1, m.down1)?;
    let e2 = run_stage(tape, x, &m.enc2, "enc2", &mut trace)?;
    let x = down(tape, e2, m.down2)?;
    let x = run_stage(tape, x, &m.latent, "latent", &mut trace)?;

    let x = up(tape, x, m.up3)?;
    let x = tape.concat(x, e2, 1)?;
    let x = conv1(tape, x, m.reduce2)?;
    let x = run_stage(tape, x, &m.dec2, "dec2", &mut trace)?;

    let x = up(tape, x, m.up2)?;
    let x = tape.concat(x, e1, 1)?;
    let x = conv1(tape, x, m.reduce1)?;
    let x = run_stage(tape, x, &m.dec1, "dec1", &mut trace)?;

    let x = up(tape, x, m.up1)?;
    let x = tape.concat(x, e0, 1)?;
    let x = run_stage(tape, x, &m.dec0, "dec0", &mut trace)?;
    let x = run_stage(tape, x, &m.refine, "refine", &mut trace)?;

    let residual = conv3(tape, x, m.output_proj)?;
    let full = tape.add(residual, padded)?;
    let out = if (ph, pw) == (h, w) {
        full
    } else {
        tape.slice(full, &[0, 0, 0, 0], &[b, cfg.out_channels, h, w])?
    };
    Ok((out, trace))
}

/// Restores a degraded [B, C, H, W] image outside any training loop. For
/// super-resolution tasks the input is first upscaled bilinearly by the
/// task's scale; all other tasks restore at the input resolution.
pub fn restore<T: Scalar>(
    state: &ModelState<T>,
    degraded: &Tensor<T>,
    mode: TaskMode,
) -> Result<Tensor<T>> {
    let pre = match mode.upsample_scale() {
        Some(s) => bilinear_scale(degraded, s as f64)?,
        None => degraded.clone(),
    };
    let mut tape = Tape::new();
    let (vars, _) = state.register(&mut tape);
    let x = tape.constant(pre);
    let y = forward(&mut tape, &vars, x)?;
    Ok(tape.value(y).clone())
}
