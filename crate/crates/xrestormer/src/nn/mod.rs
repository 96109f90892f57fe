//! Neural-network building blocks on [B, C, H, W] feature maps: convolution,
//! per-pixel layer normalization, pixel (un)shuffle, window partitioning for
//! spatial attention, spatial padding, and bilinear resampling.

mod conv;
mod norm;
mod pad;
mod resample;
pub(crate) mod window;

pub use conv::{conv2d, Conv2d, PadMode};
pub use norm::layer_norm;
pub use pad::{pad_reflect, pad_zero};
pub use resample::{bilinear_resize, bilinear_scale, pixel_shuffle, pixel_unshuffle};
pub use window::{overlapping_window_partition, window_partition, window_reverse};
