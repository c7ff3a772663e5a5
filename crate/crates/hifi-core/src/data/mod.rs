//! Image I/O, paired-dataset loading, and synthetic degradation for
//! desk-scale experiments.

pub mod image_io;
mod pairs;
mod synth;

pub use image_io::{decode_ppm, encode_ppm, load_image, save_image, tensor_to_rgb8};
pub use pairs::{list_image_files, load_pairs, LoadedPairs};
pub use synth::{synth_degrade, synth_image, synth_pairs, DegradationSpec};

use crate::tensor::Tensor;

/// A degraded input image with its ground-truth reference, both
/// `(1, 3, H, W)` with values in [0, 1].
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub id: String,
    pub degraded: Tensor,
    pub ground_truth: Tensor,
}
