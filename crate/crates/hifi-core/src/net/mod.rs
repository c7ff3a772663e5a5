//! The full enhancement network: Haar five-input preparation, reinforcement
//! fusion (or its plain-convolution ablation), attention, and gated fusion.

mod cbam;
mod gated;
pub mod params;
mod rfm;
mod rfu;

pub use cbam::cbam_forward_vars;
pub use gated::{gated_fusion_vars, weight_generator_vars};
pub use params::{
    init_params, init_params_with, CbamParams, ConfidenceNorm, ConvVars, ConvsParams, FusionParams,
    FusionVars, NetworkConfig, NetworkParams, NetworkVars, RfmHaarParams, RfuParams, RfuVars,
    CBAM_BOTTLENECK, FUSED_CHANNELS, GATED_CHANNELS, RFU_CHANNELS,
};
pub use rfm::{convs_forward_vars, rfm_haar_forward_vars};
pub use rfu::rfu_forward_vars;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::haar::make_five_inputs_var;
use crate::tensor::Tensor;

/// Differentiable forward pass over graph vars.
pub fn hifi_forward_vars(image: &Var, p: &NetworkVars) -> Result<Var> {
    if image.shape().c != 3 {
        return Err(Error::Shape(format!("expected a 3-channel image, got {}", image.shape())));
    }
    let five: [Var; 5] = if p.config.use_haar {
        make_five_inputs_var(image)?
    } else {
        std::array::from_fn(|_| image.clone())
    };
    let f0 = match &p.fusion {
        FusionVars::RfmHaar { rfus, res } => rfm_haar_forward_vars(&five, rfus, res.as_ref())?,
        FusionVars::Convs(convs) => convs_forward_vars(&five, convs)?,
    };
    let f2 = match &p.cbam {
        Some(cbam) => cbam_forward_vars(&f0, cbam)?,
        None => f0,
    };
    gated_fusion_vars(&f2, &p.f3_proj, &p.weight_gen, p.config.confidence_norm)
}

/// Enhances an image: `(n, 3, H, W)` in, `(n, 3, H, W)` out. Pure in
/// `(image, params)`; no gradient graph is built.
pub fn hifi_forward(image: &Tensor, p: &NetworkParams) -> Result<Tensor> {
    let out = hifi_forward_vars(&Var::constant(image.clone()), &p.vars(false))?;
    Ok(out.value().clone())
}

/// Plain-tensor fusion unit forward (maxpool per the unit's own flag).
pub fn rfu_forward(input1: &Tensor, input2: &Tensor, p: &RfuParams) -> Result<Tensor> {
    let vars = lift_rfu(p, false);
    let out = rfu_forward_vars(&Var::constant(input1.clone()), &Var::constant(input2.clone()), &vars)?;
    Ok(out.value().clone())
}

/// Plain-tensor fusion module forward.
pub fn rfm_haar_forward(inputs: &[Tensor; 5], p: &RfmHaarParams) -> Result<Tensor> {
    let vars: [RfuVars; 4] = std::array::from_fn(|i| lift_rfu(&p.rfus[i], false));
    let res = p.res.as_ref().map(|res| {
        std::array::from_fn(|i| ConvVars {
            weight: Var::constant(res[i].weight.clone()),
            bias: Var::constant(res[i].bias.clone()),
        })
    });
    let inputs: [Var; 5] = std::array::from_fn(|i| Var::constant(inputs[i].clone()));
    let out = rfm_haar_forward_vars(&inputs, &vars, res.as_ref())?;
    Ok(out.value().clone())
}

/// Plain-tensor attention forward.
pub fn cbam_forward(f0: &Tensor, p: &CbamParams) -> Result<Tensor> {
    let vars = CbamVars {
        mlp_a: lift_conv(&p.mlp_a),
        mlp_b: lift_conv(&p.mlp_b),
        spatial: lift_conv(&p.spatial),
    };
    let out = cbam_forward_vars(&Var::constant(f0.clone()), &vars)?;
    Ok(out.value().clone())
}

/// Plain-tensor gated fusion forward using the network's projection head,
/// weight generator and confidence normalization.
pub fn gated_fusion(f2: &Tensor, p: &NetworkParams) -> Result<Tensor> {
    let f3 = lift_conv(&p.f3_proj);
    let wg: [ConvVars; 5] = std::array::from_fn(|i| lift_conv(&p.weight_gen[i]));
    let out = gated_fusion_vars(&Var::constant(f2.clone()), &f3, &wg, p.config.confidence_norm)?;
    Ok(out.value().clone())
}

use params::CbamVars;

fn lift_conv(p: &crate::tensor::ConvParams) -> ConvVars {
    ConvVars { weight: Var::constant(p.weight.clone()), bias: Var::constant(p.bias.clone()) }
}

fn lift_rfu(p: &RfuParams, _trainable: bool) -> RfuVars {
    RfuVars {
        base_path: p.base_path.as_ref().map(|b| (lift_conv(&b.conv1), lift_conv(&b.conv5))),
        mlp: p.mlp.as_ref().map(|m| (lift_conv(&m.conv_a), lift_conv(&m.conv_b))),
        reinf_conv1: lift_conv(&p.reinf_path.conv1),
        reinf_conv3: lift_conv(&p.reinf_path.conv3),
        use_maxpool: p.use_maxpool,
    }
}
