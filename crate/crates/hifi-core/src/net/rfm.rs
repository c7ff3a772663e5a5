//! Reinforcement fusion module: chains four fusion units with residual
//! convolutions, feeding the image and its four upsampled Haar bands.
//!
//! With `u_j` the output of unit `j` and `re_j` the (linear) residual 3x3
//! convolutions:
//!
//! ```text
//! u1 = RFU1(A, B)          x2 = u1 + re1(A)
//! u2 = RFU2(x2, C)         x3 = u2 + re2(x2)
//! u3 = RFU3(x3, D)         x4 = concat(x3, u3 + re3(x3))    // 32 channels
//! u4 = RFU4(x4, E)         out = concat(x2, u4 + re4(x4))   // 32 channels
//! ```
//!
//! Unit 4 consumes the 32-channel concatenation but keeps 16 output
//! channels, so the residual sum against `re4` type-checks; this is the one
//! channel bookkeeping consistent with the published dataflow.

use crate::autodiff::{self, Var};
use crate::error::{Error, Result};
use crate::tensor::Activation;

use super::params::{ConvVars, RfuVars};
use super::rfu::rfu_forward_vars;

pub fn rfm_haar_forward_vars(
    inputs: &[Var; 5],
    rfus: &[RfuVars; 4],
    res: Option<&[ConvVars; 4]>,
) -> Result<Var> {
    if inputs[0].shape().c != 3 {
        return Err(Error::Shape(format!(
            "fusion module expects a 3-channel base image, got {}",
            inputs[0].shape()
        )));
    }
    let residual = |x: &Var, u: &Var, re: Option<&ConvVars>| -> Result<Var> {
        match re {
            Some(re) => autodiff::add(u, &re.apply(x, Activation::None)?),
            None => Ok(u.clone()),
        }
    };
    let re = |i: usize| res.map(|r| &r[i]);

    let u1 = rfu_forward_vars(&inputs[0], &inputs[1], &rfus[0])?;
    let x2 = residual(&inputs[0], &u1, re(0))?;
    let u2 = rfu_forward_vars(&x2, &inputs[2], &rfus[1])?;
    let x3 = residual(&x2, &u2, re(1))?;
    let u3 = rfu_forward_vars(&x3, &inputs[3], &rfus[2])?;
    let x4 = autodiff::concat_channels(&x3, &residual(&x3, &u3, re(2))?)?;
    let u4 = rfu_forward_vars(&x4, &inputs[4], &rfus[3])?;
    autodiff::concat_channels(&x2, &residual(&x4, &u4, re(3))?)
}

/// Ablation replacement for the fusion module: the five inputs are channel
/// concatenated (15 channels) and pushed through six 3x3 convolutions with
/// ReLU between them.
pub fn convs_forward_vars(inputs: &[Var; 5], convs: &[ConvVars]) -> Result<Var> {
    let mut x = inputs[0].clone();
    for input in &inputs[1..] {
        x = autodiff::concat_channels(&x, input)?;
    }
    let last = convs.len() - 1;
    for (i, conv) in convs.iter().enumerate() {
        let act = if i < last { Activation::Relu } else { Activation::None };
        x = conv.apply(&x, act)?;
    }
    Ok(x)
}
