//! Clean-image datasets and on-the-fly training pairs.
//!
//! A batch is built per sample as crop, then flip, then degrade: the
//! augmented clean patch becomes the target, its freshly degraded copy the
//! input. Super-resolution pairs keep both sides at patch size by scaling
//! the low-resolution rendition back up bilinearly, matching how the model
//! is fed at inference.

use rand::Rng;

use crate::degrade::DegradationSpec;
use crate::error::{fmt_shape, Error, Result};
use crate::model::TaskMode;
use crate::nn::bilinear_scale;
use crate::tensor::{Scalar, Tensor};
use crate::train::config::{TrainConfig, TrainTask};

/// Clean images, each `[3, H, W]` with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar> {
    images: Vec<Tensor<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Vec<Tensor<T>>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Contract("dataset needs at least one image".into()));
        }
        for (i, img) in images.iter().enumerate() {
            let s = img.shape();
            if s.len() != 3 || s[0] != 3 || s[1] == 0 || s[2] == 0 {
                return Err(Error::Shape(format!(
                    "dataset image {i} must be [3, H, W], got {}",
                    fmt_shape(s)
                )));
            }
            if !img.all_finite() {
                return Err(Error::Numeric(format!("dataset image {i} has non-finite values")));
            }
        }
        Ok(Self { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor<T>] {
        &self.images
    }
}

/// Draws one task for an all-in-one sample: the five families uniformly,
/// with the super-resolution scale split uniformly over 2 and 4.
pub fn sample_task(rng: &mut impl Rng) -> TaskMode {
    match rng.gen_range(0..5u32) {
        0 => TaskMode::Denoise,
        1 => TaskMode::Sr { scale: if rng.gen_range(0..2u32) == 0 { 2 } else { 4 } },
        2 => TaskMode::Deblur,
        3 => TaskMode::Derain,
        _ => TaskMode::Dehaze,
    }
}

fn flip_plane<T: Scalar>(img: &Tensor<T>, horizontal: bool, vertical: bool) -> Tensor<T> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let src = img.data();
    Tensor::from_fn(img.shape(), |i| {
        let (ch, rest) = (i / (h * w), i % (h * w));
        let (mut y, mut x) = (rest / w, rest % w);
        if vertical {
            y = h - 1 - y;
        }
        if horizontal {
            x = w - 1 - x;
        }
        src[(ch * h + y) * w + x]
    })
}

fn crop<T: Scalar>(img: &Tensor<T>, y0: usize, x0: usize, size: usize) -> Tensor<T> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let src = img.data();
    Tensor::from_fn(&[img.shape()[0], size, size], |i| {
        let (c, rest) = (i / (size * size), i % (size * size));
        let (y, x) = (rest / size, rest % size);
        src[(c * h + y0 + y) * w + x0 + x]
    })
}

fn as_batch_of_one<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let mut shape = vec![1];
    shape.extend_from_slice(img.shape());
    Tensor::new(shape, img.data().to_vec()).expect("adding a leading axis keeps the element count")
}

/// One training pair: a degraded input patch and its clean target,
/// both `[3, patch, patch]`.
fn sample_pair<T: Scalar>(
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let img = &dataset.images()[rng.gen_range(0..dataset.len())];
    let (h, w) = (img.shape()[1], img.shape()[2]);
    if h < cfg.patch || w < cfg.patch {
        return Err(Error::Contract(format!(
            "patch {} does not fit a {h}x{w} image",
            cfg.patch
        )));
    }
    let y0 = rng.gen_range(0..=h - cfg.patch);
    let x0 = rng.gen_range(0..=w - cfg.patch);
    let mut target = crop(img, y0, x0, cfg.patch);
    if cfg.flips {
        let horizontal = rng.gen::<bool>();
        let vertical = rng.gen::<bool>();
        if horizontal || vertical {
            target = flip_plane(&target, horizontal, vertical);
        }
    }

    let mode = match cfg.task {
        TrainTask::Single(mode) => mode,
        TrainTask::AllInOne => sample_task(rng),
    };
    let spec = DegradationSpec::sample(mode, rng);
    let degraded = spec.apply(&target)?;
    let input = match spec {
        DegradationSpec::Sr { scale } => {
            let up = bilinear_scale(&as_batch_of_one(&degraded), scale as f64)?;
            Tensor::new(target.shape().to_vec(), up.data().to_vec())?
        }
        _ => degraded,
    };
    Ok((input, target))
}

/// Assembles a full batch of pairs as `([B, 3, patch, patch], same)`.
///
/// The draw order per sample is fixed: image index, crop corner (y then x),
/// flip coins (horizontal then vertical, only when flips are enabled), task
/// (all-in-one only), then the degradation's own parameters. Equal rng
/// states therefore reproduce equal batches bitwise.
pub fn sample_batch<T: Scalar>(
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let p = cfg.patch;
    let plane = 3 * p * p;
    let mut inputs = Vec::with_capacity(cfg.batch * plane);
    let mut targets = Vec::with_capacity(cfg.batch * plane);
    for _ in 0..cfg.batch {
        let (input, target) = sample_pair(dataset, cfg, rng)?;
        inputs.extend_from_slice(input.data());
        targets.extend_from_slice(target.data());
    }
    let shape = vec![cfg.batch, 3, p, p];
    Ok((Tensor::new(shape.clone(), inputs)?, Tensor::new(shape, targets)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp_image(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[3, h, w], |i| (i % 97) as f64 / 96.0)
    }

    fn cfg_for_tests() -> TrainConfig {
        TrainConfig {
            patch: 16,
            batch: 4,
            cosine_periods: vec![10],
            total_iters: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn dataset_rejects_bad_images() {
        assert!(Dataset::<f64>::new(vec![]).is_err());
        assert!(Dataset::new(vec![Tensor::<f64>::zeros(&[1, 8, 8])]).is_err());
        let mut nan = Tensor::<f64>::zeros(&[3, 8, 8]);
        nan.data_mut()[5] = f64::NAN;
        assert!(Dataset::new(vec![nan]).is_err());
        assert!(Dataset::new(vec![Tensor::<f64>::zeros(&[3, 8, 8])]).is_ok());
    }

    #[test]
    fn equal_seeds_reproduce_equal_batches() {
        let data = Dataset::new(vec![ramp_image(40, 52), ramp_image(33, 64)]).unwrap();
        let cfg = cfg_for_tests();
        let (a_in, a_tgt) = sample_batch(&data, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (b_in, b_tgt) = sample_batch(&data, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (c_in, _) = sample_batch(&data, &cfg, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert!(a_in.bits_eq(&b_in) && a_tgt.bits_eq(&b_tgt));
        assert!(!a_in.bits_eq(&c_in), "different seeds should differ");
        assert_eq!(a_in.shape(), &[4, 3, 16, 16]);
    }

    #[test]
    fn patch_larger_than_image_is_rejected() {
        let data = Dataset::new(vec![ramp_image(12, 40)]).unwrap();
        let cfg = cfg_for_tests();
        let err = sample_batch(&data, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    /// Replays the documented draw order by hand and checks the pair is
    /// exactly degrade(flip(crop(image))) with the same draws.
    #[test]
    fn pairs_are_degraded_flipped_crops() {
        let img = ramp_image(37, 45);
        let data = Dataset::new(vec![img.clone()]).unwrap();
        let cfg = TrainConfig { batch: 1, ..cfg_for_tests() };

        for seed in 0..6 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (input, target) = sample_batch(&data, &cfg, &mut rng).unwrap();

            let mut replay = ChaCha8Rng::seed_from_u64(seed);
            let (h, w) = (37usize, 45usize);
            let _idx = replay.gen_range(0..1usize);
            let y0 = replay.gen_range(0..=h - 16);
            let x0 = replay.gen_range(0..=w - 16);
            let mut want = crop(&img, y0, x0, 16);
            let horizontal = replay.gen::<bool>();
            let vertical = replay.gen::<bool>();
            if horizontal || vertical {
                want = flip_plane(&want, horizontal, vertical);
            }
            let mode = sample_task(&mut replay);
            let spec = DegradationSpec::sample(mode, &mut replay);
            assert_eq!(spec.task().to_string(), mode.to_string());

            assert!(
                target.bits_eq(&Tensor::new(vec![1, 3, 16, 16], want.data().to_vec()).unwrap()),
                "seed {seed}: target must be the flipped crop"
            );
            let degraded = spec.apply(&want).unwrap();
            let want_input = match &spec {
                DegradationSpec::Sr { scale } => {
                    bilinear_scale(&as_batch_of_one(&degraded), *scale as f64).unwrap()
                }
                _ => as_batch_of_one(&degraded),
            };
            assert!(
                input.bits_eq(&Tensor::new(vec![1, 3, 16, 16], want_input.data().to_vec()).unwrap()),
                "seed {seed}: input must be the degraded rendition ({spec})"
            );
        }
    }

    #[test]
    fn flip_helper_is_involutive_and_moves_corners() {
        let img = ramp_image(5, 7);
        let hv = flip_plane(&flip_plane(&img, true, true), true, true);
        assert!(hv.bits_eq(&img));
        let h = flip_plane(&img, true, false);
        assert_eq!(h.data()[0], img.data()[6], "top-left becomes top-right");
        let v = flip_plane(&img, false, true);
        assert_eq!(v.data()[0], img.data()[4 * 7], "top-left becomes bottom-left");
    }

    #[test]
    fn task_draws_are_uniform_over_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 100_000usize;
        let mut counts = [0usize; 5];
        let mut scale2 = 0usize;
        for _ in 0..n {
            match sample_task(&mut rng) {
                TaskMode::Denoise => counts[0] += 1,
                TaskMode::Sr { scale } => {
                    counts[1] += 1;
                    if scale == 2 {
                        scale2 += 1;
                    }
                }
                TaskMode::Deblur => counts[2] += 1,
                TaskMode::Derain => counts[3] += 1,
                TaskMode::Dehaze => counts[4] += 1,
            }
        }
        for (family, &count) in counts.iter().enumerate() {
            let freq = count as f64 / n as f64;
            assert!((freq - 0.2).abs() <= 0.01, "family {family} frequency {freq}");
        }
        let sr_split = scale2 as f64 / counts[1] as f64;
        assert!((sr_split - 0.5).abs() <= 0.02, "scale split {sr_split}");
    }
}
