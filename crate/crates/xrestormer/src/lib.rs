//! Desk-scale image restoration backbone pairing channelwise and windowed
//! spatial attention in a four-level U-shaped transformer.
//!
//! Everything numeric is built from scratch on a small dense-tensor core with
//! tape-based reverse-mode automatic differentiation: convolution, layer
//! normalization, transposed (channel) attention, overlapping-window (spatial)
//! attention, the gated feed-forward network, the four-level U-shaped model,
//! analytic degradation operators for the five restoration tasks, PSNR/SSIM
//! metrics, and an AdamW trainer with a cosine warm-restart schedule.
//!
//! Kernels are single-threaded and accumulate in a fixed order (innermost axis
//! sequential), so forward and backward results are bitwise reproducible for a
//! given seed within one build.

pub mod attention;
pub mod degrade;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, ModelState, TaskMode};
pub use tensor::{Dtype, Scalar, Tape, Tensor, Var};
pub use train::{Dataset, TrainConfig, TrainTask};
