//! Network shape configuration and restoration task modes.
//!
//! A [`ModelConfig`] pins every size the network is built from: channel
//! widths, block pairs per level, head counts, window geometry, and the
//! feed-forward expansion. Configs round-trip through TOML so checkpoints
//! and manifests can embed them verbatim.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::attention::gdfn_hidden;
use crate::error::{Error, Result};
use crate::nn::window::overlap_extent;

/// Shape of the restoration network.
///
/// The network is a four-level U-shape. Level `l` runs at `base_channels
/// << l` channels and `1 / 2^l` of the input resolution. Each level holds
/// `pairs_per_level[l]` block pairs; a pair is one transposed-attention
/// block followed by one spatial-attention block (or a second
/// transposed-attention block when `ssab_enabled` is off, which reproduces
/// the all-channelwise ancestor network). The first decoder level runs at
/// `2 * base_channels` because the last skip connection is concatenated
/// without a channel reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Channels of the input image (3 for RGB).
    pub in_channels: usize,
    /// Channels of the restored output. Must equal `in_channels` because
    /// the network predicts a residual that is added to the input.
    pub out_channels: usize,
    /// Feature channels at the finest level; doubled at each level down.
    pub base_channels: usize,
    /// Block pairs at each of the four levels, finest first. The encoder
    /// uses the first three entries, the bottleneck the last; the decoder
    /// mirrors the first three.
    pub pairs_per_level: [usize; 4],
    /// Block pairs in the refinement stage after the decoder, running at
    /// `2 * base_channels`.
    pub refinement_pairs: usize,
    /// Attention heads at each level, finest first.
    pub heads: [usize; 4],
    /// Spatial attention window edge, in pixels.
    pub window: usize,
    /// Fraction by which key/value windows overhang the query window on
    /// each side pair; 0.5 turns an 8-pixel window into a 12-pixel
    /// key/value field.
    pub overlap: f64,
    /// Width multiplier of the gated feed-forward hidden layer.
    pub expansion: f64,
    /// When false, every spatial-attention block is replaced by a second
    /// transposed-attention block of the same width.
    pub ssab_enabled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// Full-size configuration: 26.06M parameters.
    pub fn full() -> Self {
        Self {
            in_channels: 3,
            out_channels: 3,
            base_channels: 48,
            pairs_per_level: [2, 3, 3, 4],
            refinement_pairs: 2,
            heads: [1, 2, 4, 8],
            window: 8,
            overlap: 0.5,
            expansion: 2.66,
            ssab_enabled: true,
        }
    }

    /// Desk-scale configuration for tests and quick experiments. Same
    /// topology, narrow channels, one pair per level.
    pub fn tiny() -> Self {
        Self {
            in_channels: 3,
            out_channels: 3,
            base_channels: 8,
            pairs_per_level: [1, 1, 1, 1],
            refinement_pairs: 1,
            heads: [1, 2, 4, 8],
            window: 8,
            overlap: 0.5,
            expansion: 2.66,
            ssab_enabled: true,
        }
    }

    /// Feature channels at encoder level `l` (0 = finest, 3 = bottleneck).
    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Feature channels at decoder level `l`. Level 0 runs doubled because
    /// its skip concatenation is not followed by a channel reduction.
    pub fn decoder_channels(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.base_channels
        } else {
            self.base_channels << level
        }
    }

    /// Hidden width of the gated feed-forward network at `channels` wide.
    pub fn ffn_hidden(&self, channels: usize) -> usize {
        gdfn_hidden(channels, self.expansion)
    }

    /// Checks every structural constraint; all constructors of model state
    /// assume a validated config.
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.in_channels != self.out_channels {
            return Err(Error::Config(format!(
                "in_channels {} must equal out_channels {}: the output is input plus a residual",
                self.in_channels, self.out_channels
            )));
        }
        if self.base_channels == 0 || self.base_channels % 2 != 0 {
            return Err(Error::Config(format!(
                "base_channels {} must be positive and even (the first downsampling halves it)",
                self.base_channels
            )));
        }
        for level in 0..4 {
            let c = self.level_channels(level);
            let h = self.heads[level];
            if h == 0 || c % h != 0 {
                return Err(Error::Config(format!(
                    "level {level}: {h} heads must evenly split {c} channels"
                )));
            }
        }
        if 2 * self.base_channels % self.heads[0] != 0 {
            return Err(Error::Config(format!(
                "decoder level 0: {} heads must evenly split {} channels",
                self.heads[0],
                2 * self.base_channels
            )));
        }
        if self.window < 2 {
            return Err(Error::Config(format!("window {} must be at least 2", self.window)));
        }
        overlap_extent(self.window, self.overlap)?;
        if !(self.expansion > 0.0) || self.ffn_hidden(self.base_channels) == 0 {
            return Err(Error::Config(format!(
                "expansion {} gives an empty feed-forward hidden layer at {} channels",
                self.expansion, self.base_channels
            )));
        }
        Ok(())
    }

    /// Serializes to TOML text.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(format!("config to TOML: {e}")))
    }

    /// Parses and validates a TOML config. Missing keys take their
    /// full-size defaults; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Parse(format!("config from TOML: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// What kind of degradation a restoration call is undoing. Only
/// super-resolution changes the model-side handling: the input is upscaled
/// bilinearly to the target size first, and the network then restores at
/// full resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskMode {
    Denoise,
    Sr { scale: usize },
    Deblur,
    Derain,
    Dehaze,
}

impl TaskMode {
    /// The five task families, with super-resolution at its default scale.
    pub const ALL: [TaskMode; 5] = [
        TaskMode::Denoise,
        TaskMode::Sr { scale: 4 },
        TaskMode::Deblur,
        TaskMode::Derain,
        TaskMode::Dehaze,
    ];

    /// How much to upscale the input before the network runs.
    pub fn upsample_scale(self) -> Option<usize> {
        match self {
            TaskMode::Sr { scale } => Some(scale),
            _ => None,
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskMode::Denoise => write!(f, "denoise"),
            TaskMode::Sr { scale } => write!(f, "sr{scale}"),
            TaskMode::Deblur => write!(f, "deblur"),
            TaskMode::Derain => write!(f, "derain"),
            TaskMode::Dehaze => write!(f, "dehaze"),
        }
    }
}

impl FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoise" => Ok(TaskMode::Denoise),
            "deblur" => Ok(TaskMode::Deblur),
            "derain" => Ok(TaskMode::Derain),
            "dehaze" => Ok(TaskMode::Dehaze),
            _ => {
                if let Some(digits) = s.strip_prefix("sr") {
                    match digits.parse::<usize>() {
                        Ok(scale @ (2 | 4)) => return Ok(TaskMode::Sr { scale }),
                        Ok(scale) => {
                            return Err(Error::Parse(format!(
                                "unsupported super-resolution scale {scale}; expected 2 or 4"
                            )))
                        }
                        Err(_) => {}
                    }
                }
                Err(Error::Parse(format!(
                    "unknown task mode {s:?}; expected denoise, sr2, sr4, deblur, derain, or dehaze"
                )))
            }
        }
    }
}

impl From<TaskMode> for String {
    fn from(mode: TaskMode) -> String {
        mode.to_string()
    }
}

impl TryFrom<String> for TaskMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}
