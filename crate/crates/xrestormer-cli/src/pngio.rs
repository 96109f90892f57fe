//! PNG round trips between files and `[3, H, W]` float tensors in `[0, 1]`.
//!
//! Reading divides each 8-bit sample by 255; writing clips to `[0, 1]`,
//! scales by 255, and rounds half up, so a value of exactly 0.5 becomes
//! byte 128 and a read/write/read cycle reproduces the first read bitwise.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageReader, RgbImage};
use xrestormer::error::{Error, Result};
use xrestormer::tensor::Tensor;

/// Reads an 8-bit RGB PNG as a `[3, H, W]` tensor scaled into `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let img = reader
        .decode()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let rgb: RgbImage = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        other => {
            return Err(Error::Parse(format!(
                "{}: expected 8-bit RGB, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Parse(format!("{}: empty image", path.display())));
    }
    let raw = rgb.into_raw();
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, rest) = (i / (h * w), i % (h * w));
        raw[rest * 3 + c] as f32 / 255.0
    }))
}

/// Writes a `[3, H, W]` tensor in `[0, 1]` as an 8-bit RGB PNG.
pub fn write_png(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape(format!(
            "png output must be [3, H, W], got {}",
            xrestormer::error::fmt_shape(s)
        )));
    }
    let (h, w) = (s[1], s[2]);
    let data = img.data();
    let mut raw = vec![0u8; h * w * 3];
    for (i, byte) in raw.iter_mut().enumerate() {
        let (pix, c) = (i / 3, i % 3);
        let v = data[c * h * w + pix];
        *byte = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::save_buffer(path, &raw, w as u32, h as u32, ColorType::Rgb8)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
