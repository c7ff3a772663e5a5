//! Composite training objective: Charbonnier + SSIM + perceptual terms with
//! configurable weights.
//!
//! All losses are differentiable with respect to the prediction; the metric
//! suite reuses the same SSIM implementation, so there is a single source of
//! truth for it.

use crate::autodiff::{self, Var};
use crate::error::{Error, Result};
use crate::net::params::SeedStream;
use crate::tensor::{Activation, ConvParams, Shape, Tensor};

/// Weights of the three objective terms plus the Charbonnier epsilon.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub lambda_cha: f64,
    pub lambda_ssim: f64,
    pub lambda_per: f64,
    pub charbonnier_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_cha: 1.0, lambda_ssim: 1.1, lambda_per: 11.0, charbonnier_eps: 1e-3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_cha", self.lambda_cha),
            ("lambda_ssim", self.lambda_ssim),
            ("lambda_per", self.lambda_per),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a non-negative finite value, got {v}")));
            }
        }
        if !(self.charbonnier_eps > 0.0) {
            return Err(Error::Config(format!(
                "charbonnier_eps must be positive, got {}",
                self.charbonnier_eps
            )));
        }
        Ok(())
    }
}

fn check_same_shape(pred: &Var, gt: &Var) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "loss inputs must have equal shapes, got {} and {}",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

/// Mean over all elements of `sqrt((pred - gt)^2 + eps^2)`.
pub fn charbonnier_var(pred: &Var, gt: &Var, eps: f64) -> Result<Var> {
    check_same_shape(pred, gt)?;
    let d = autodiff::sub(pred, gt)?;
    let sq = autodiff::mul(&d, &d)?;
    let shifted = autodiff::add_scalar(&sq, eps * eps);
    Ok(autodiff::mean_all(&autodiff::sqrt(&shifted)))
}

pub fn charbonnier(pred: &Tensor, gt: &Tensor, eps: f64) -> Result<f64> {
    charbonnier_var(&Var::constant(pred.clone()), &Var::constant(gt.clone()), eps)?.scalar_value()
}

/// Normalized 2D Gaussian window as a `(1, 1, win, win)` kernel.
fn gaussian_window(win: usize, sigma: f64) -> Tensor {
    let half = (win as f64 - 1.0) / 2.0;
    let g1: Vec<f64> = (0..win)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = g1.iter().sum();
    let mut data = Vec::with_capacity(win * win);
    for y in 0..win {
        for x in 0..win {
            data.push(g1[y] * g1[x] / (norm * norm));
        }
    }
    Tensor::from_vec(Shape::new(1, 1, win, win), data).expect("window shape")
}

/// SSIM window size: 11, shrunk to the largest odd size that fits when the
/// image is smaller than the standard window.
fn ssim_window_size(h: usize, w: usize) -> usize {
    let mut win = 11.min(h).min(w);
    if win % 2 == 0 {
        win -= 1;
    }
    win.max(1)
}

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_SIGMA: f64 = 1.5;

/// Mean local SSIM over a Gaussian window (valid positions only), computed
/// per channel and averaged. Constants assume unit dynamic range.
pub fn ssim_var(x: &Var, y: &Var) -> Result<Var> {
    check_same_shape(x, y)?;
    let s = x.shape();
    let win = ssim_window_size(s.h, s.w);
    let kernel = Var::constant(gaussian_window(win, SSIM_SIGMA));
    let zero_bias = Var::constant(Tensor::zeros(Shape::new(1, 1, 1, 1)));

    // Filter each channel independently: fold channels into the batch dim,
    // run one single-channel valid convolution, fold back.
    let filter = |v: &Var| -> Result<Var> {
        let vs = v.shape();
        let folded = autodiff::reshape(v, Shape::new(vs.n * vs.c, 1, vs.h, vs.w))?;
        let f = autodiff::conv2d_padded(&folded, &kernel, &zero_bias, 0, Activation::None)?;
        let fs = f.shape();
        autodiff::reshape(&f, Shape::new(vs.n, vs.c, fs.h, fs.w))
    };

    let mu_x = filter(x)?;
    let mu_y = filter(y)?;
    let sigma_x = autodiff::sub(&filter(&autodiff::mul(x, x)?)?, &autodiff::mul(&mu_x, &mu_x)?)?;
    let sigma_y = autodiff::sub(&filter(&autodiff::mul(y, y)?)?, &autodiff::mul(&mu_y, &mu_y)?)?;
    let sigma_xy = autodiff::sub(&filter(&autodiff::mul(x, y)?)?, &autodiff::mul(&mu_x, &mu_y)?)?;

    let num = autodiff::mul(
        &autodiff::add_scalar(&autodiff::scale(&autodiff::mul(&mu_x, &mu_y)?, 2.0), SSIM_C1),
        &autodiff::add_scalar(&autodiff::scale(&sigma_xy, 2.0), SSIM_C2),
    )?;
    let den = autodiff::mul(
        &autodiff::add_scalar(
            &autodiff::add(&autodiff::mul(&mu_x, &mu_x)?, &autodiff::mul(&mu_y, &mu_y)?)?,
            SSIM_C1,
        ),
        &autodiff::add_scalar(&autodiff::add(&sigma_x, &sigma_y)?, SSIM_C2),
    )?;
    Ok(autodiff::mean_all(&autodiff::div(&num, &den)?))
}

pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    ssim_var(&Var::constant(x.clone()), &Var::constant(y.clone()))?.scalar_value()
}

/// `1 - SSIM(pred, gt)`.
pub fn ssim_loss_var(pred: &Var, gt: &Var) -> Result<Var> {
    let s = ssim_var(pred, gt)?;
    Ok(autodiff::add_scalar(&autodiff::scale(&s, -1.0), 1.0))
}

pub fn ssim_loss(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    ssim_loss_var(&Var::constant(pred.clone()), &Var::constant(gt.clone()))?.scalar_value()
}

/// A fixed (non-trainable) convolutional feature map for the perceptual
/// term. The default is a seeded three-stage stack (3 -> 16 -> 32 -> 64,
/// 3x3 kernels, stride 2, ReLU) standing in for a pretrained extractor;
/// gradients flow through it to its input.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    convs: Vec<ConvParams>,
}

pub const DEFAULT_EXTRACTOR_SEED: u64 = 7;

impl FeatureExtractor {
    pub fn with_seed(seed: u64) -> Self {
        let mut seeds = SeedStream::new(seed);
        let plan = [(3usize, 16usize), (16, 32), (32, 64)];
        let convs = plan
            .iter()
            .map(|&(cin, cout)| ConvParams::init(cout, cin, 3, seeds.next()).expect("valid conv"))
            .collect();
        FeatureExtractor { convs }
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_channels()
    }

    /// Identity extractor: features are the image itself. Useful for tests
    /// and for an L1-pixel perceptual term.
    pub fn identity() -> Self {
        FeatureExtractor { convs: Vec::new() }
    }

    pub fn forward_var(&self, x: &Var) -> Result<Var> {
        if !self.convs.is_empty() && x.shape().c != self.in_channels() {
            return Err(Error::Shape(format!(
                "feature extractor expects {} channels, got {}",
                self.in_channels(),
                x.shape()
            )));
        }
        let mut t = x.clone();
        for conv in &self.convs {
            let w = Var::constant(conv.weight.clone());
            let b = Var::constant(conv.bias.clone());
            t = autodiff::conv2d(&t, &w, &b, Activation::Relu)?;
            t = autodiff::subsample2(&t)?;
        }
        Ok(t)
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::with_seed(DEFAULT_EXTRACTOR_SEED)
    }
}

/// Mean absolute difference between extractor features of `pred` and `gt`.
pub fn perceptual_var(pred: &Var, gt: &Var, fx: &FeatureExtractor) -> Result<Var> {
    check_same_shape(pred, gt)?;
    let fp = fx.forward_var(pred)?;
    let fg = fx.forward_var(gt)?;
    Ok(autodiff::mean_all(&autodiff::abs(&autodiff::sub(&fp, &fg)?)))
}

pub fn perceptual(pred: &Tensor, gt: &Tensor, fx: &FeatureExtractor) -> Result<f64> {
    perceptual_var(&Var::constant(pred.clone()), &Var::constant(gt.clone()), fx)?.scalar_value()
}

/// `lambda_cha * L_cha + lambda_ssim * L_ssim + lambda_per * L_per`.
pub fn total_loss_var(pred: &Var, gt: &Var, w: &LossWeights, fx: &FeatureExtractor) -> Result<Var> {
    let cha = charbonnier_var(pred, gt, w.charbonnier_eps)?;
    let ssim = ssim_loss_var(pred, gt)?;
    let per = perceptual_var(pred, gt, fx)?;
    let mut total = autodiff::scale(&cha, w.lambda_cha);
    total = autodiff::add(&total, &autodiff::scale(&ssim, w.lambda_ssim))?;
    autodiff::add(&total, &autodiff::scale(&per, w.lambda_per))
}

pub fn total_loss(pred: &Tensor, gt: &Tensor, w: &LossWeights, fx: &FeatureExtractor) -> Result<f64> {
    total_loss_var(&Var::constant(pred.clone()), &Var::constant(gt.clone()), w, fx)?.scalar_value()
}
