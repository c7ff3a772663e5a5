//! Gated fusion head: projects the attended features to 12 channels, runs
//! the multi-scale weight generator, splits both maps into four 3-channel
//! slices and sums the elementwise products.

use crate::autodiff::{self, Var};
use crate::error::{Error, Result};
use crate::tensor::Activation;

use super::params::{ConfidenceNorm, ConvVars};

/// The confidence generator: five convolutions of alternating scale
/// (3,5,7,3,5), ReLU after each.
pub fn weight_generator_vars(f2: &Var, weight_gen: &[ConvVars; 5]) -> Result<Var> {
    let mut w = f2.clone();
    for conv in weight_gen {
        w = conv.apply(&w, Activation::Relu)?;
    }
    Ok(w)
}

pub fn gated_fusion_vars(
    f2: &Var,
    f3_proj: &ConvVars,
    weight_gen: &[ConvVars; 5],
    norm: ConfidenceNorm,
) -> Result<Var> {
    let expected = f3_proj.weight.shape().c;
    if f2.shape().c != expected {
        return Err(Error::Shape(format!(
            "gated fusion expects {expected} channels, got {}",
            f2.shape()
        )));
    }

    let f3 = f3_proj.apply(f2, Activation::Relu)?;
    let w_all = weight_generator_vars(f2, weight_gen)?;

    let slices = |v: &Var| -> Result<Vec<Var>> {
        (0..4).map(|i| autodiff::slice_channels(v, 3 * i, 3)).collect()
    };
    let features = slices(&f3)?;
    let mut confidences = slices(&w_all)?;

    match norm {
        ConfidenceNorm::Raw => {}
        ConfidenceNorm::Sigmoid => {
            for c in confidences.iter_mut() {
                *c = autodiff::sigmoid(c);
            }
        }
        ConfidenceNorm::Softmax => {
            let exps: Vec<Var> = confidences.iter().map(autodiff::exp).collect();
            let mut denom = autodiff::add(&exps[0], &exps[1])?;
            denom = autodiff::add(&denom, &exps[2])?;
            denom = autodiff::add(&denom, &exps[3])?;
            confidences = exps.iter().map(|e| autodiff::div(e, &denom)).collect::<Result<_>>()?;
        }
    }

    let mut out = autodiff::mul(&features[0], &confidences[0])?;
    for i in 1..4 {
        out = autodiff::add(&out, &autodiff::mul(&features[i], &confidences[i])?)?;
    }
    Ok(out)
}
