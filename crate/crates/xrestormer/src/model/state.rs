//! Model parameters: every tensor the network owns, plus construction,
//! traversal, and the closed-form parameter count.
//!
//! Traversal order is a contract: `visit`, `visit_mut`, and `register` all
//! walk the same field order (declaration order below), so an optimizer can
//! pair tape variables with parameter tensors positionally and checkpoints
//! can restore by sequence. Parameter names produced by the visitors are
//! stable identifiers of the form `enc0.1.b.attn.qkv_w`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    gdfn_hidden, SsabParams, SsabVars, TsabParams, TsabVars, INIT_STD,
};
use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::nn::window::overlap_extent;
use crate::tensor::{trunc_normal, Scalar, Tape, Tensor, Var};

/// The second block of a pair: spatial attention normally, or a second
/// transposed-attention block when spatial attention is disabled.
#[derive(Debug, Clone)]
pub enum SecondBlock<T: Scalar> {
    Spatial(SsabParams<T>),
    Transposed(TsabParams<T>),
}

/// Tape variables for a [`SecondBlock`].
#[derive(Debug, Clone, Copy)]
pub enum SecondVars {
    Spatial(SsabVars),
    Transposed(TsabVars),
}

/// One block pair: a transposed-attention block (`a`) followed by a second
/// block (`b`) whose kind depends on the config.
#[derive(Debug, Clone)]
pub struct BlockPair<T: Scalar> {
    pub a: TsabParams<T>,
    pub b: SecondBlock<T>,
}

/// Tape variables for a [`BlockPair`].
#[derive(Debug, Clone, Copy)]
pub struct PairVars {
    pub a: TsabVars,
    pub b: SecondVars,
}

impl<T: Scalar> BlockPair<T> {
    fn init(cfg: &ModelConfig, channels: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        let a = TsabParams::init(channels, heads, cfg.expansion, rng);
        let b = if cfg.ssab_enabled {
            SecondBlock::Spatial(SsabParams::init(
                channels,
                heads,
                cfg.window,
                cfg.overlap,
                cfg.expansion,
                rng,
            )?)
        } else {
            SecondBlock::Transposed(TsabParams::init(channels, heads, cfg.expansion, rng))
        };
        Ok(Self { a, b })
    }

    fn register(&self, tape: &mut Tape<T>, order: &mut Vec<Var>) -> PairVars {
        let a = self.a.register(tape, order);
        let b = match &self.b {
            SecondBlock::Spatial(p) => SecondVars::Spatial(p.register(tape, order)),
            SecondBlock::Transposed(p) => SecondVars::Transposed(p.register(tape, order)),
        };
        PairVars { a, b }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.a.visit(&format!("{prefix}.a"), f);
        match &self.b {
            SecondBlock::Spatial(p) => p.visit(&format!("{prefix}.b"), f),
            SecondBlock::Transposed(p) => p.visit(&format!("{prefix}.b"), f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.a.visit_mut(&format!("{prefix}.a"), f);
        match &mut self.b {
            SecondBlock::Spatial(p) => p.visit_mut(&format!("{prefix}.b"), f),
            SecondBlock::Transposed(p) => p.visit_mut(&format!("{prefix}.b"), f),
        }
    }
}

/// All parameters of the restoration network.
///
/// Field order is the dataflow order of the forward pass and the traversal
/// order of every visitor. Convolution weights are stored as
/// `[out, in/groups, kh, kw]`; none of the plain convolutions has a bias.
#[derive(Debug, Clone)]
pub struct ModelState<T: Scalar> {
    pub config: ModelConfig,
    /// 3x3 conv lifting the image into `base_channels` features.
    pub input_proj: Tensor<T>,
    pub enc0: Vec<BlockPair<T>>,
    /// 3x3 conv halving channels before the 2x pixel unshuffle (level 0 to 1).
    pub down0: Tensor<T>,
    pub enc1: Vec<BlockPair<T>>,
    pub down1: Tensor<T>,
    pub enc2: Vec<BlockPair<T>>,
    pub down2: Tensor<T>,
    pub latent: Vec<BlockPair<T>>,
    /// 3x3 conv doubling channels before the 2x pixel shuffle (level 3 to 2).
    pub up3: Tensor<T>,
    /// 1x1 conv halving channels after the level-2 skip concatenation.
    pub reduce2: Tensor<T>,
    pub dec2: Vec<BlockPair<T>>,
    pub up2: Tensor<T>,
    pub reduce1: Tensor<T>,
    pub dec1: Vec<BlockPair<T>>,
    pub up1: Tensor<T>,
    /// Decoder level 0 runs at `2 * base_channels`: the level-0 skip
    /// concatenation is kept unreduced.
    pub dec0: Vec<BlockPair<T>>,
    pub refine: Vec<BlockPair<T>>,
    /// 3x3 conv projecting refined features to the output residual.
    pub output_proj: Tensor<T>,
}

/// Tape variables for a registered [`ModelState`], plus a copy of the
/// config so the forward pass can check its input against it.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub config: ModelConfig,
    pub input_proj: Var,
    pub enc0: Vec<PairVars>,
    pub down0: Var,
    pub enc1: Vec<PairVars>,
    pub down1: Var,
    pub enc2: Vec<PairVars>,
    pub down2: Var,
    pub latent: Vec<PairVars>,
    pub up3: Var,
    pub reduce2: Var,
    pub dec2: Vec<PairVars>,
    pub up2: Var,
    pub reduce1: Var,
    pub dec1: Vec<PairVars>,
    pub up1: Var,
    pub dec0: Vec<PairVars>,
    pub refine: Vec<PairVars>,
    pub output_proj: Var,
}

fn stage<T: Scalar>(
    cfg: &ModelConfig,
    pairs: usize,
    channels: usize,
    heads: usize,
    rng: &mut impl Rng,
) -> Result<Vec<BlockPair<T>>> {
    (0..pairs).map(|_| BlockPair::init(cfg, channels, heads, rng)).collect()
}

impl<T: Scalar> ModelState<T> {
    /// Builds a freshly initialized model. All convolution weights are
    /// truncated-normal with deviation 0.02, matching the attention
    /// operators; the draw order is fixed, so equal seeds give equal
    /// models.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let cfg = config;
        let c = |l: usize| cfg.level_channels(l);
        let conv = |shape: &[usize], rng: &mut ChaCha8Rng| trunc_normal::<T>(shape, INIT_STD, rng);

        Ok(Self {
            config: cfg.clone(),
            input_proj: conv(&[c(0), cfg.in_channels, 3, 3], rng),
            enc0: stage(cfg, cfg.pairs_per_level[0], c(0), cfg.heads[0], rng)?,
            down0: conv(&[c(0) / 2, c(0), 3, 3], rng),
            enc1: stage(cfg, cfg.pairs_per_level[1], c(1), cfg.heads[1], rng)?,
            down1: conv(&[c(1) / 2, c(1), 3, 3], rng),
            enc2: stage(cfg, cfg.pairs_per_level[2], c(2), cfg.heads[2], rng)?,
            down2: conv(&[c(2) / 2, c(2), 3, 3], rng),
            latent: stage(cfg, cfg.pairs_per_level[3], c(3), cfg.heads[3], rng)?,
            up3: conv(&[2 * c(3), c(3), 3, 3], rng),
            reduce2: conv(&[c(2), 2 * c(2), 1, 1], rng),
            dec2: stage(cfg, cfg.pairs_per_level[2], c(2), cfg.heads[2], rng)?,
            up2: conv(&[2 * c(2), c(2), 3, 3], rng),
            reduce1: conv(&[c(1), 2 * c(1), 1, 1], rng),
            dec1: stage(cfg, cfg.pairs_per_level[1], c(1), cfg.heads[1], rng)?,
            up1: conv(&[2 * c(1), c(1), 3, 3], rng),
            dec0: stage(cfg, cfg.pairs_per_level[0], cfg.decoder_channels(0), cfg.heads[0], rng)?,
            refine: stage(cfg, cfg.refinement_pairs, cfg.decoder_channels(0), cfg.heads[0], rng)?,
            output_proj: conv(&[cfg.out_channels, cfg.decoder_channels(0), 3, 3], rng),
        })
    }

    /// Total parameter count by enumeration. Must agree with
    /// [`count_parameters`] on the same config; a test pins that.
    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Number of parameter tensors, i.e. entries a visitor sees.
    pub fn num_tensors(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _| n += 1);
        n
    }

    /// Puts every parameter on the tape as a trainable leaf. Returns the
    /// variable structure for the forward pass and the flat leaf list in
    /// traversal order (the optimizer pairs it with `visit` positionally).
    pub fn register(&self, tape: &mut Tape<T>) -> (ModelVars, Vec<Var>) {
        let mut order = Vec::new();
        let o = &mut order;
        let vars = ModelVars {
            config: self.config.clone(),
            input_proj: leaf(tape, o, &self.input_proj),
            enc0: self.enc0.iter().map(|p| p.register(tape, o)).collect(),
            down0: leaf(tape, o, &self.down0),
            enc1: self.enc1.iter().map(|p| p.register(tape, o)).collect(),
            down1: leaf(tape, o, &self.down1),
            enc2: self.enc2.iter().map(|p| p.register(tape, o)).collect(),
            down2: leaf(tape, o, &self.down2),
            latent: self.latent.iter().map(|p| p.register(tape, o)).collect(),
            up3: leaf(tape, o, &self.up3),
            reduce2: leaf(tape, o, &self.reduce2),
            dec2: self.dec2.iter().map(|p| p.register(tape, o)).collect(),
            up2: leaf(tape, o, &self.up2),
            reduce1: leaf(tape, o, &self.reduce1),
            dec1: self.dec1.iter().map(|p| p.register(tape, o)).collect(),
            up1: leaf(tape, o, &self.up1),
            dec0: self.dec0.iter().map(|p| p.register(tape, o)).collect(),
            refine: self.refine.iter().map(|p| p.register(tape, o)).collect(),
            output_proj: leaf(tape, o, &self.output_proj),
        };
        (vars, order)
    }

    /// Walks every parameter in traversal order with its stable name.
    pub fn visit(&self, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f("input_proj.w".into(), &self.input_proj);
        visit_stage(&self.enc0, "enc0", f);
        f("down0.w".into(), &self.down0);
        visit_stage(&self.enc1, "enc1", f);
        f("down1.w".into(), &self.down1);
        visit_stage(&self.enc2, "enc2", f);
        f("down2.w".into(), &self.down2);
        visit_stage(&self.latent, "latent", f);
        f("up3.w".into(), &self.up3);
        f("reduce2.w".into(), &self.reduce2);
        visit_stage(&self.dec2, "dec2", f);
        f("up2.w".into(), &self.up2);
        f("reduce1.w".into(), &self.reduce1);
        visit_stage(&self.dec1, "dec1", f);
        f("up1.w".into(), &self.up1);
        visit_stage(&self.dec0, "dec0", f);
        visit_stage(&self.refine, "refine", f);
        f("output_proj.w".into(), &self.output_proj);
    }

    /// Mutable variant of [`ModelState::visit`]; same order, same names.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f("input_proj.w".into(), &mut self.input_proj);
        visit_stage_mut(&mut self.enc0, "enc0", f);
        f("down0.w".into(), &mut self.down0);
        visit_stage_mut(&mut self.enc1, "enc1", f);
        f("down1.w".into(), &mut self.down1);
        visit_stage_mut(&mut self.enc2, "enc2", f);
        f("down2.w".into(), &mut self.down2);
        visit_stage_mut(&mut self.latent, "latent", f);
        f("up3.w".into(), &mut self.up3);
        f("reduce2.w".into(), &mut self.reduce2);
        visit_stage_mut(&mut self.dec2, "dec2", f);
        f("up2.w".into(), &mut self.up2);
        f("reduce1.w".into(), &mut self.reduce1);
        visit_stage_mut(&mut self.dec1, "dec1", f);
        f("up1.w".into(), &mut self.up1);
        visit_stage_mut(&mut self.dec0, "dec0", f);
        visit_stage_mut(&mut self.refine, "refine", f);
        f("output_proj.w".into(), &mut self.output_proj);
    }

    /// Zeroes every projection that writes into a residual stream (the
    /// attention and feed-forward output projections) and the final output
    /// conv. Every block then maps its input through unchanged and the
    /// whole network reproduces its input exactly.
    pub fn zero_output_projections(&mut self) {
        self.visit_mut(&mut |name, t| {
            if name.ends_with(".attn.proj_w")
                || name.ends_with(".ffn.out_w")
                || name == "output_proj.w"
            {
                for v in t.data_mut() {
                    *v = T::zero();
                }
            }
        });
    }
}

fn leaf<T: Scalar>(tape: &mut Tape<T>, order: &mut Vec<Var>, t: &Tensor<T>) -> Var {
    let v = tape.leaf(t);
    order.push(v);
    v
}

fn visit_stage<T: Scalar>(
    stage: &[BlockPair<T>],
    name: &str,
    f: &mut dyn FnMut(String, &Tensor<T>),
) {
    for (i, pair) in stage.iter().enumerate() {
        pair.visit(&format!("{name}.{i}"), f);
    }
}

fn visit_stage_mut<T: Scalar>(
    stage: &mut [BlockPair<T>],
    name: &str,
    f: &mut dyn FnMut(String, &mut Tensor<T>),
) {
    for (i, pair) in stage.iter_mut().enumerate() {
        pair.visit_mut(&format!("{name}.{i}"), f);
    }
}

/// Closed-form parameter count of the network a config describes. Kept in
/// deliberate lockstep with the structure built by [`ModelState::init`];
/// tests assert it equals enumeration over an actual instance.
pub fn count_parameters(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let (mo, _) = overlap_extent(cfg.window, cfg.overlap)?;
    let span = cfg.window + mo - 1;

    let gdfn = |c: usize| {
        let hg = gdfn_hidden(c, cfg.expansion);
        // pointwise in (c -> 2hg), depthwise 3x3 on 2hg, pointwise out (hg -> c)
        2 * hg * c + 18 * hg + hg * c
    };
    // two layer norms, qkv pointwise + depthwise, output projection,
    // per-head temperatures, feed-forward
    let tsab = |c: usize, h: usize| 4 * c + 3 * c * c + 27 * c + c * c + h + gdfn(c);
    // two layer norms, biased qkv pointwise, relative position table,
    // output projection, feed-forward
    let ssab =
        |c: usize, h: usize| 4 * c + 3 * c * c + 3 * c + span * span * h + c * c + gdfn(c);
    let pair = |c: usize, h: usize| {
        tsab(c, h) + if cfg.ssab_enabled { ssab(c, h) } else { tsab(c, h) }
    };

    let c = |l: usize| cfg.level_channels(l);
    let p = &cfg.pairs_per_level;
    let mut blocks = 0;
    for l in 0..4 {
        blocks += p[l] * pair(c(l), cfg.heads[l]); // encoder and bottleneck
    }
    blocks += p[2] * pair(c(2), cfg.heads[2]); // dec2
    blocks += p[1] * pair(c(1), cfg.heads[1]); // dec1
    let cd0 = cfg.decoder_channels(0);
    blocks += p[0] * pair(cd0, cfg.heads[0]); // dec0
    blocks += cfg.refinement_pairs * pair(cd0, cfg.heads[0]);

    let mut convs = cfg.in_channels * c(0) * 9; // input projection
    for l in 0..3 {
        convs += c(l) * (c(l) / 2) * 9; // downsampling convs
        convs += c(l + 1) * (2 * c(l + 1)) * 9; // upsampling convs
    }
    convs += 2 * c(2) * c(2) + 2 * c(1) * c(1); // skip reductions
    convs += cd0 * cfg.out_channels * 9; // output projection

    Ok(blocks + convs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_parameter_count_is_frozen() {
        let n = count_parameters(&ModelConfig::full()).unwrap();
        assert_eq!(n, 26_063_428);

        let mut ablated = ModelConfig::full();
        ablated.ssab_enabled = false;
        assert_eq!(count_parameters(&ablated).unwrap(), 26_126_644);
    }

    #[test]
    fn closed_form_matches_enumeration_tiny() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::<f32>::init(&cfg, 7).unwrap();
        assert_eq!(state.num_params(), count_parameters(&cfg).unwrap());

        let mut ablated = cfg;
        ablated.ssab_enabled = false;
        let state = ModelState::<f32>::init(&ablated, 7).unwrap();
        assert_eq!(state.num_params(), count_parameters(&ablated).unwrap());
    }

    #[test]
    fn closed_form_matches_enumeration_full_size() {
        let cfg = ModelConfig::full();
        let state = ModelState::<f32>::init(&cfg, 0).unwrap();
        assert_eq!(state.num_params(), count_parameters(&cfg).unwrap());
    }

    #[test]
    fn seeds_reproduce_and_distinguish() {
        let cfg = ModelConfig::tiny();
        let a = ModelState::<f64>::init(&cfg, 11).unwrap();
        let b = ModelState::<f64>::init(&cfg, 11).unwrap();
        let c = ModelState::<f64>::init(&cfg, 12).unwrap();

        let flat = |s: &ModelState<f64>| {
            let mut v = Vec::new();
            s.visit(&mut |_, t| v.extend(t.data().iter().copied()));
            v
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn registration_order_matches_visit_order() {
        let cfg = ModelConfig::tiny();
        let state = ModelState::<f64>::init(&cfg, 3).unwrap();
        let mut tape = Tape::new();
        let (_, order) = state.register(&mut tape);

        let mut names = Vec::new();
        let mut tensors = Vec::new();
        state.visit(&mut |name, t| {
            names.push(name);
            tensors.push(t.clone());
        });
        assert_eq!(order.len(), tensors.len());
        for ((var, t), name) in order.iter().zip(&tensors).zip(&names) {
            assert!(tape.value(*var).bits_eq(t), "leaf/visit mismatch at {name}");
        }
        assert_eq!(names[0], "input_proj.w");
        assert_eq!(names.last().unwrap(), "output_proj.w");
        assert!(names.contains(&"enc0.0.a.attn.qkv_w".to_string()));
        assert!(names.contains(&"latent.0.b.attn.rel_bias".to_string()));
    }

    #[test]
    fn visit_names_are_unique() {
        let state = ModelState::<f32>::init(&ModelConfig::tiny(), 0).unwrap();
        let mut names = Vec::new();
        state.visit(&mut |name, _| names.push(name));
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn disabling_spatial_attention_swaps_block_kind() {
        let mut cfg = ModelConfig::tiny();
        cfg.ssab_enabled = false;
        let state = ModelState::<f32>::init(&cfg, 0).unwrap();
        assert!(matches!(state.latent[0].b, SecondBlock::Transposed(_)));

        let state = ModelState::<f32>::init(&ModelConfig::tiny(), 0).unwrap();
        assert!(matches!(state.latent[0].b, SecondBlock::Spatial(_)));
    }
}
