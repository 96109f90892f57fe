//! Residual blocks. Both block kinds follow the same pre-norm layout:
//!
//! ```text
//! x  -> x + attention(norm(x))   -> y
//! y  -> y + feed_forward(norm(y))
//! ```
//!
//! The transposed-attention block uses the channelwise operator; the
//! spatial-attention block uses overlapping-window attention, zero-padding
//! the normalized map up to a window multiple around the attention call and
//! cropping back, so any spatial extent is accepted.

use rand::Rng;

use crate::attention::gdfn::{gdfn_forward, GdfnParams, GdfnVars};
use crate::attention::mdta::{mdta_forward, MdtaParams, MdtaVars};
use crate::attention::oca::{oca_forward, OcaParams, OcaVars};
use crate::error::Result;
use crate::nn::{layer_norm, pad_zero};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Stabilizer for every layer normalization in the network.
pub const LN_EPS: f64 = 1e-5;

/// Per-channel scale and shift of a layer normalization.
#[derive(Debug, Clone)]
pub struct LnParams<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct LnVars {
    pub gamma: Var,
    pub beta: Var,
}

impl<T: Scalar> LnParams<T> {
    pub fn init(channels: usize) -> Self {
        Self { gamma: Tensor::full(&[channels], T::one()), beta: Tensor::zeros(&[channels]) }
    }

    pub fn num_params(&self) -> usize {
        self.gamma.numel() + self.beta.numel()
    }

    pub fn register(&self, tape: &mut Tape<T>, order: &mut Vec<Var>) -> LnVars {
        let vars = LnVars { gamma: tape.leaf(&self.gamma), beta: tape.leaf(&self.beta) };
        order.extend([vars.gamma, vars.beta]);
        vars
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{prefix}.gamma"), &self.gamma);
        f(format!("{prefix}.beta"), &self.beta);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Transposed-attention block: channelwise attention plus gated
/// feed-forward, each behind its own normalization and residual.
#[derive(Debug, Clone)]
pub struct TsabParams<T: Scalar> {
    pub norm1: LnParams<T>,
    pub attn: MdtaParams<T>,
    pub norm2: LnParams<T>,
    pub ffn: GdfnParams<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct TsabVars {
    pub norm1: LnVars,
    pub attn: MdtaVars,
    pub norm2: LnVars,
    pub ffn: GdfnVars,
}

impl<T: Scalar> TsabParams<T> {
    pub fn init(channels: usize, heads: usize, expansion: f64, rng: &mut impl Rng) -> Self {
        Self {
            norm1: LnParams::init(channels),
            attn: MdtaParams::init(channels, heads, rng),
            norm2: LnParams::init(channels),
            ffn: GdfnParams::init(channels, expansion, rng),
        }
    }

    pub fn num_params(&self) -> usize {
        self.norm1.num_params() + self.attn.num_params() + self.norm2.num_params() + self.ffn.num_params()
    }

    pub fn register(&self, tape: &mut Tape<T>, order: &mut Vec<Var>) -> TsabVars {
        TsabVars {
            norm1: self.norm1.register(tape, order),
            attn: self.attn.register(tape, order),
            norm2: self.norm2.register(tape, order),
            ffn: self.ffn.register(tape, order),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.norm2.visit(&format!("{prefix}.norm2"), f);
        self.ffn.visit(&format!("{prefix}.ffn"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.norm1.visit_mut(&format!("{prefix}.norm1"), f);
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.norm2.visit_mut(&format!("{prefix}.norm2"), f);
        self.ffn.visit_mut(&format!("{prefix}.ffn"), f);
    }
}

/// Spatial-attention block: overlapping-window attention plus gated
/// feed-forward, each behind its own normalization and residual.
#[derive(Debug, Clone)]
pub struct SsabParams<T: Scalar> {
    pub norm1: LnParams<T>,
    pub attn: OcaParams<T>,
    pub norm2: LnParams<T>,
    pub ffn: GdfnParams<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct SsabVars {
    pub norm1: LnVars,
    pub attn: OcaVars,
    pub norm2: LnVars,
    pub ffn: GdfnVars,
}

impl<T: Scalar> SsabParams<T> {
    pub fn init(
        channels: usize,
        heads: usize,
        window: usize,
        overlap: f64,
        expansion: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LnParams::init(channels),
            attn: OcaParams::init(channels, heads, window, overlap, rng)?,
            norm2: LnParams::init(channels),
            ffn: GdfnParams::init(channels, expansion, rng),
        })
    }

    pub fn num_params(&self) -> usize {
        self.norm1.num_params() + self.attn.num_params() + self.norm2.num_params() + self.ffn.num_params()
    }

    pub fn register(&self, tape: &mut Tape<T>, order: &mut Vec<Var>) -> SsabVars {
        SsabVars {
            norm1: self.norm1.register(tape, order),
            attn: self.attn.register(tape, order),
            norm2: self.norm2.register(tape, order),
            ffn: self.ffn.register(tape, order),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.norm2.visit(&format!("{prefix}.norm2"), f);
        self.ffn.visit(&format!("{prefix}.ffn"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.norm1.visit_mut(&format!("{prefix}.norm1"), f);
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.norm2.visit_mut(&format!("{prefix}.norm2"), f);
        self.ffn.visit_mut(&format!("{prefix}.ffn"), f);
    }
}

/// Runs a transposed-attention block on a [B, C, H, W] map.
pub fn tsab_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &TsabVars) -> Result<Var> {
    Ok(tsab_forward_traced(tape, x, p)?.0)
}

/// Like [`tsab_forward`], also returning the attention matrix for
/// inspection (each row is a probability distribution over channels).
pub fn tsab_forward_traced<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &TsabVars) -> Result<(Var, Var)> {
    let normed = layer_norm(tape, x, p.norm1.gamma, p.norm1.beta, LN_EPS)?;
    let (att, attn) = mdta_forward(tape, normed, &p.attn)?;
    let x = tape.add(x, att)?;
    let normed = layer_norm(tape, x, p.norm2.gamma, p.norm2.beta, LN_EPS)?;
    let ffn = gdfn_forward(tape, normed, &p.ffn)?;
    Ok((tape.add(x, ffn)?, attn))
}

/// Runs a spatial-attention block on a [B, C, H, W] map of any extent. The
/// normalized map is zero-padded on the bottom and right up to the next
/// window multiple around the attention call, then cropped back, so the
/// residual stays aligned with the input.
pub fn ssab_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &SsabVars) -> Result<Var> {
    Ok(ssab_forward_traced(tape, x, p)?.0)
}

/// Like [`ssab_forward`], also returning the attention matrix for
/// inspection (each row is a probability distribution over key positions).
pub fn ssab_forward_traced<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &SsabVars) -> Result<(Var, Var)> {
    let s = tape.value(x).shape().to_vec();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let m = p.attn.window;
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let normed = layer_norm(tape, x, p.norm1.gamma, p.norm1.beta, LN_EPS)?;
    let (att, attn) = if (ph, pw) == (h, w) {
        oca_forward(tape, normed, &p.attn)?
    } else {
        let padded = pad_zero(tape, normed, [0, ph - h, 0, pw - w])?;
        let (full, attn) = oca_forward(tape, padded, &p.attn)?;
        (tape.slice(full, &[0, 0, 0, 0], &[b, c, h, w])?, attn)
    };
    let x = tape.add(x, att)?;
    let normed = layer_norm(tape, x, p.norm2.gamma, p.norm2.beta, LN_EPS)?;
    let ffn = gdfn_forward(tape, normed, &p.ffn)?;
    Ok((tape.add(x, ffn)?, attn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::randn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zeroed_projections_make_tsab_an_identity() {
        let mut p = TsabParams::<f64>::init(4, 2, 2.0, &mut rng(1));
        for v in p.attn.proj_w.data_mut() {
            *v = 0.0;
        }
        for v in p.ffn.out_w.data_mut() {
            *v = 0.0;
        }
        let x = randn::<f64>(&[1, 4, 5, 6], 0.0, 1.0, &mut rng(2));
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let vars = p.register(&mut tape, &mut Vec::new());
        let y = tsab_forward(&mut tape, xv, &vars).unwrap();
        assert!(tape.value(y).bits_eq(&x));
    }

    #[test]
    fn zeroed_projections_make_ssab_an_identity() {
        let mut p = SsabParams::<f64>::init(4, 2, 4, 0.5, 2.0, &mut rng(3)).unwrap();
        for v in p.attn.proj_w.data_mut() {
            *v = 0.0;
        }
        for v in p.ffn.out_w.data_mut() {
            *v = 0.0;
        }
        // 5x6 forces the internal pad-to-8 and crop path.
        let x = randn::<f64>(&[1, 4, 5, 6], 0.0, 1.0, &mut rng(4));
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let vars = p.register(&mut tape, &mut Vec::new());
        let y = ssab_forward(&mut tape, xv, &vars).unwrap();
        assert!(tape.value(y).bits_eq(&x));
    }

    #[test]
    fn ssab_handles_extents_off_the_window_grid() {
        let p = SsabParams::<f64>::init(6, 2, 4, 0.5, 2.66, &mut rng(5)).unwrap();
        let x = randn::<f64>(&[2, 6, 6, 10], 0.0, 1.0, &mut rng(6));
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let vars = p.register(&mut tape, &mut Vec::new());
        let y = ssab_forward(&mut tape, xv, &vars).unwrap();
        let yv = tape.value(y);
        assert_eq!(yv.shape(), &[2, 6, 6, 10]);
        assert!(yv.all_finite());
    }

    #[test]
    fn registration_order_matches_visit_order() {
        let p = SsabParams::<f64>::init(4, 2, 4, 0.5, 2.0, &mut rng(7)).unwrap();
        let mut tape = Tape::<f64>::new();
        let mut order = Vec::new();
        let _ = p.register(&mut tape, &mut order);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        p.visit("blk", &mut |name, t| {
            names.push(name);
            tensors.push(t.clone());
        });
        assert_eq!(order.len(), names.len(), "visit and register disagree on the set");
        for (i, var) in order.iter().enumerate() {
            assert!(
                tape.value(*var).bits_eq(&tensors[i]),
                "entry {i} ({}) out of order",
                names[i]
            );
        }
        // Spot-check the hierarchy in the names.
        assert_eq!(names[0], "blk.norm1.gamma");
        assert!(names.iter().any(|n| n == "blk.attn.rel_bias"));
        assert!(names.last().unwrap().ends_with(".ffn.out_w"));
    }

    #[test]
    fn tsab_gradients_flow_to_every_parameter() {
        let p = TsabParams::<f64>::init(4, 2, 1.5, &mut rng(8));
        let x = randn::<f64>(&[1, 4, 4, 4], 0.0, 1.0, &mut rng(9));
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let mut order = Vec::new();
        let vars = p.register(&mut tape, &mut order);
        let y = tsab_forward(&mut tape, xv, &vars).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let s = tape.sum_all(sq);
        tape.backward(s).unwrap();
        for (i, var) in order.iter().enumerate() {
            let g = tape.grad(*var).unwrap_or_else(|| panic!("no gradient for parameter {i}"));
            assert!(g.all_finite(), "gradient {i} has non-finite entries");
        }
    }
}
