//! Reinforcement fusion unit: fuses a base image with a reinforcement image
//! through learned coefficient matrices.
//!
//! Dataflow for inputs `(input1, input2)` with C output channels:
//!
//! * base branch:   `I_b = maxpool(conv5x5_C(conv1x1_{C/2}(input1)))`, ReLU
//!   after each convolution;
//! * shared MLP:    `M_b = sigmoid(conv1x1_C(relu(conv1x1_{C/2}(input1))))`,
//!   no activation on the outer convolution;
//! * reinforcement: `M_a = maxpool(conv3x3_C(conv1x1_C(input2)))`, ReLU after
//!   each convolution;
//! * output:        `I_b * (M_a + M_b)` elementwise.
//!
//! The component toggles drop the max-pooling, the MLP term (leaving
//! `M_a` as the fusion intensity), or the base-image product (returning the
//! intensity matrix itself).

use crate::autodiff::{self, Var};
use crate::error::{Error, Result};
use crate::tensor::Activation;

use super::params::RfuVars;

pub fn rfu_forward_vars(input1: &Var, input2: &Var, p: &RfuVars) -> Result<Var> {
    if !input1.shape().same_spatial(&input2.shape()) || input1.shape().n != input2.shape().n {
        return Err(Error::Shape(format!(
            "fusion unit inputs must align spatially, got {} and {}",
            input1.shape(),
            input2.shape()
        )));
    }

    let pool = |x: Var| -> Result<Var> {
        if p.use_maxpool {
            autodiff::maxpool2d(&x)
        } else {
            Ok(x)
        }
    };

    let m_a = {
        let t = p.reinf_conv1.apply(input2, Activation::Relu)?;
        let t = p.reinf_conv3.apply(&t, Activation::Relu)?;
        pool(t)?
    };

    let m_f = match &p.mlp {
        Some((conv_a, conv_b)) => {
            let t = conv_a.apply(input1, Activation::Relu)?;
            let t = conv_b.apply(&t, Activation::None)?;
            let m_b = autodiff::sigmoid(&t);
            autodiff::add(&m_a, &m_b)?
        }
        None => m_a,
    };

    match &p.base_path {
        Some((conv1, conv5)) => {
            let t = conv1.apply(input1, Activation::Relu)?;
            let t = conv5.apply(&t, Activation::Relu)?;
            let i_b = pool(t)?;
            autodiff::mul(&i_b, &m_f)
        }
        None => Ok(m_f),
    }
}
