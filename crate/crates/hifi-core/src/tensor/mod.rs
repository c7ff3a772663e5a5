//! Dense 4D tensors in `(batch, channel, height, width)` layout plus the
//! forward operations the network needs. Reverse-mode gradients live in
//! [`crate::autodiff`]; the raw arithmetic shared by both layers lives in
//! [`kernels`].

pub mod kernels;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shape of a 4D tensor: `(n, c, h, w)` in row-major order.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat index of `(n, c, y, x)`.
    #[inline(always)]
    pub const fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    /// Offset of the `(n, c)` plane.
    #[inline(always)]
    pub const fn plane(&self, n: usize, c: usize) -> usize {
        (n * self.c + c) * self.h * self.w
    }

    pub fn same_spatial(&self, other: &Shape) -> bool {
        self.h == other.h && self.w == other.w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Immutable dense 4D tensor of `f64` scalars.
///
/// Cloning is cheap (the buffer is shared via `Arc`); all operations are pure
/// functions returning fresh tensors, so values are safe to use from multiple
/// threads.
#[derive(Clone)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}, grad={})", self.shape, self.requires_grad)
    }
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data: Arc::new(data), requires_grad: false })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: Arc::new(vec![0.0; shape.numel()]), requires_grad: false }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor { shape, data: Arc::new(vec![value; shape.numel()]), requires_grad: false }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(Shape::new(1, 1, 1, 1), value)
    }

    /// Uniform samples in `[lo, hi)`, deterministic per seed.
    pub fn uniform(shape: Shape, lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
        Tensor { shape, data: Arc::new(data), requires_grad: false }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Marks (or unmarks) this tensor as a differentiation leaf.
    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// The single element of a 1x1x1x1 tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::usage(format!("expected scalar tensor, got shape {}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same buffer reinterpreted under a new shape with equal element count.
    pub fn reshaped(&self, shape: Shape) -> Result<Tensor> {
        if shape.numel() != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {} ({} elements) to {} ({} elements)",
                self.shape,
                self.numel(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data: Arc::clone(&self.data), requires_grad: self.requires_grad })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Tensor { shape: self.shape, data: Arc::new(data), requires_grad: false }
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    /// True if both tensors hold bit-identical data of the same shape.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Learnable parameters of one convolution: weight `(out_ch, in_ch, k, k)`
/// and bias stored as `(1, out_ch, 1, 1)`.
#[derive(Clone, Debug)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let ws = weight.shape();
        if ws.h != ws.w {
            return Err(Error::config(format!("convolution kernel must be square, got {}", ws)));
        }
        if ws.h % 2 == 0 {
            return Err(Error::config(format!("convolution kernel size must be odd, got {}", ws.h)));
        }
        let bs = bias.shape();
        if bs != Shape::new(1, ws.n, 1, 1) {
            return Err(Error::shape(format!(
                "bias shape {} does not match {} output channels",
                bs, ws.n
            )));
        }
        Ok(ConvParams { weight, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }

    /// Fan-in scaled uniform init (`|w| <= sqrt(6 / fan_in)`), zero bias.
    pub fn init(out_ch: usize, in_ch: usize, k: usize, seed: u64) -> Result<Self> {
        let fan_in = (in_ch * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let weight = Tensor::uniform(Shape::new(out_ch, in_ch, k, k), -bound, bound, seed);
        let bias = Tensor::zeros(Shape::new(1, out_ch, 1, 1));
        ConvParams::new(weight, bias)
    }
}

/// Optional activation fused into a convolution.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    None,
    Relu,
}

// Plain-tensor versions of the network operations. Each delegates to the
// shared kernel and returns a fresh tensor; the autodiff layer wraps the same
// kernels with gradient bookkeeping.

/// 2D convolution, stride 1, zero "same" padding of `(k-1)/2`.
pub fn conv2d(input: &Tensor, params: &ConvParams, activation: Activation) -> Result<Tensor> {
    let pad = (params.kernel() - 1) / 2;
    kernels::conv2d(input, &params.weight, &params.bias, pad, activation)
}

/// Max pooling, kernel 3, stride 1, zero padding 1. The zero padding
/// participates in the max, so border outputs are `max(window, 0)`.
pub fn maxpool2d(input: &Tensor) -> Result<Tensor> {
    kernels::maxpool2d(input)
}

/// Average pooling, kernel 3, stride 1, zero padding 1, divisor fixed at 9.
pub fn avgpool2d(input: &Tensor) -> Result<Tensor> {
    kernels::avgpool2d(input)
}

pub fn relu(input: &Tensor) -> Tensor {
    kernels::relu(input)
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    kernels::sigmoid(input)
}

/// Elementwise sum. `b` may have a single channel, in which case it is
/// copied across all channels of `a`.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    kernels::binary_broadcast(a, b, |x, y| x + y)
}

/// Elementwise product with the same one-channel broadcast rule as [`add`].
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    kernels::binary_broadcast(a, b, |x, y| x * y)
}

/// Channel-wise splice: `a`'s channels followed by `b`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    kernels::concat_channels(a, b)
}

/// Channels `[start, start + count)` of the input.
pub fn slice_channels(input: &Tensor, start: usize, count: usize) -> Result<Tensor> {
    kernels::slice_channels(input, start, count)
}

/// Nearest-neighbor upsampling: output pixel `(y, x)` copies source pixel
/// `(floor(y*h/target_h), floor(x*w/target_w))`.
pub fn upsample_nearest(input: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    kernels::upsample_nearest(input, target_h, target_w)
}
