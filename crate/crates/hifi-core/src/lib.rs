//! Underwater image enhancement with reinforcement fusion of Haar wavelet
//! bands.
//!
//! The crate provides:
//!
//! * a dense 4D tensor type with reverse-mode autodiff ([`tensor`],
//!   [`autodiff`]);
//! * the one-level Haar decomposition and five-input preparation ([`haar`]);
//! * the enhancement network itself — reinforcement fusion units/module,
//!   attention, gated fusion — with ablation toggles ([`net`]);
//! * the composite Charbonnier + SSIM + perceptual objective ([`loss`]);
//! * full-reference metrics including the channel-ratio error ([`metrics`]);
//! * image I/O, synthetic degradation, and the training loop ([`data`],
//!   [`train`]);
//! * the named-tensor weight archive ([`weights`]).

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod haar;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod weights;

#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use autodiff::{GradTape, Var};
pub use data::{DegradationSpec, ImagePair};
pub use error::{Error, Result};
pub use haar::{haar_forward, haar_inverse, make_five_inputs, HaarDecomposition};
pub use loss::{FeatureExtractor, LossWeights};
pub use metrics::{MetricReport, MetricRow};
pub use net::{
    hifi_forward, init_params, init_params_with, ConfidenceNorm, NetworkConfig, NetworkParams,
};
pub use tensor::{Activation, ConvParams, Shape, Tensor};
pub use train::{train, train_resume, TrainConfig, TrainOutcome};
