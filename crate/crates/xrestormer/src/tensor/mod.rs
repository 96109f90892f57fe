//! Dense row-major tensors and the reverse-mode autodiff tape.
//!
//! A [`Tensor`] is a flat `Vec` of `f32` or `f64` plus a shape; there is no
//! view machinery and no implicit broadcasting. Differentiable programs are
//! built by pushing operations onto a [`Tape`], which records a topologically
//! ordered list of nodes and replays vector-Jacobian products in reverse.
//!
//! All kernels accumulate sequentially along the innermost axis of their
//! innermost loop, which makes every result bitwise reproducible for a fixed
//! input within one build.

mod io;
mod ops;
mod tape;

pub use io::{load_tensor, read_tensor, save_tensor, write_tensor, AnyTensor};
pub use tape::{Tape, Var};

use crate::error::{fmt_shape, Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

// ── Element types ──────────────────────────────────────────────────────────

/// Storage dtype tag, also used in the serialized header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Parse(format!("unknown dtype tag {other}"))),
        }
    }
}

/// Floating-point element type usable in tensors.
///
/// `erf` backs the exact-form GELU; the `bits` accessors exist so tests can
/// assert bitwise equality without caring about the concrete width.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Copy + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    const DTYPE: Dtype;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn erf(self) -> Self;
    fn bits(self) -> u64;
    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
    /// Width of one element in bytes.
    fn width() -> usize;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte f32"))
    }
    fn width() -> usize {
        4
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn bits(self) -> u64 {
        self.to_bits()
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte f64"))
    }
    fn width() -> usize {
        8
    }
}

// ── Tensor ─────────────────────────────────────────────────────────────────

/// Dense row-major tensor. Rank 0 (empty shape) is a scalar with one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match shape {}",
                data.len(),
                fmt_shape(&shape)
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); numel] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..numel).map(|i| f(i)).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        T::DTYPE
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major strides for this shape.
    pub fn strides(&self) -> Vec<usize> {
        strides_for(&self.shape)
    }

    /// The single element of a rank-0 or one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1, "item() on tensor with {} elements", self.data.len());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Elementwise accumulate: `self += other`. Shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
        }
    }

    /// True when both tensors have identical shape and bit patterns.
    pub fn bits_eq(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self.data.iter().zip(other.data.iter()).all(|(a, b)| a.bits() == b.bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

// ── Random initialization ──────────────────────────────────────────────────

/// Samples N(mean, std²). Draws in f64 so the stream is identical whatever
/// the target dtype.
pub fn randn<T: Scalar>(shape: &[usize], mean: f64, std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(mean, std).expect("std must be finite and positive");
    Tensor::from_fn(shape, |_| T::from_f64(dist.sample(rng)))
}

/// Truncated normal: N(0, std²) with draws outside ±2·std resampled.
pub fn trunc_normal<T: Scalar>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("std must be finite and positive");
    let bound = 2.0 * std;
    Tensor::from_fn(shape, |_| loop {
        let x = dist.sample(rng);
        if x.abs() <= bound {
            return T::from_f64(x);
        }
    })
}

pub fn uniform<T: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(lo..hi)))
}
