//! Convolutional block attention: channel attention from pooled statistics
//! through a shared two-layer MLP, then spatial attention from a 7x7
//! convolution over pooled feature maps. Pooling here is local (kernel 3,
//! stride 1), matching the pooling used everywhere else in the network.

use crate::autodiff::{self, Var};
use crate::error::{Error, Result};
use crate::tensor::Activation;

use super::params::CbamVars;

pub fn cbam_forward_vars(f0: &Var, p: &CbamVars) -> Result<Var> {
    let expected = p.mlp_a.weight.shape().c;
    if f0.shape().c != expected {
        return Err(Error::Shape(format!(
            "attention block expects {expected} channels, got {}",
            f0.shape()
        )));
    }

    // Channel attention: sigmoid(mlp(avgpool(F0)) + mlp(maxpool(F0))), the
    // MLP weights shared between the two branches.
    let mlp = |x: &Var| -> Result<Var> {
        let t = p.mlp_a.apply(x, Activation::Relu)?;
        p.mlp_b.apply(&t, Activation::None)
    };
    let za = mlp(&autodiff::avgpool2d(f0)?)?;
    let zm = mlp(&autodiff::maxpool2d(f0)?)?;
    let attn = autodiff::sigmoid(&autodiff::add(&za, &zm)?);
    let f1 = autodiff::mul(f0, &attn)?;

    // Spatial attention: one-channel sigmoid map from the concatenated
    // pooled features, broadcast-multiplied across all channels.
    let pooled = autodiff::concat_channels(&autodiff::avgpool2d(&f1)?, &autodiff::maxpool2d(&f1)?)?;
    let f1p = autodiff::sigmoid(&p.spatial.apply(&pooled, Activation::None)?);
    autodiff::mul(&f1, &f1p)
}
