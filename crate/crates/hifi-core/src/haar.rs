//! One-level 2D Haar decomposition and its exact inverse.
//!
//! The transform uses the orthonormal convention: per 2x2 block
//! `[[a, b], [c, d]]` each band coefficient is `(±a ±b ±c ±d) / 2`, which
//! makes the transform energy-preserving and the inverse the transpose.
//!
//! Band naming: `lh` ("x-direction") carries horizontal intensity changes
//! (`a - b + c - d`), `hl` ("y-direction") vertical changes, `hh` diagonal.
//! Texts differ on this labeling; downstream processing is learned, so the
//! choice is a fixed convention rather than a semantic commitment.
//!
//! Odd spatial sizes are handled by replicating the last row/column to even
//! size before the transform; the original size is remembered so the inverse
//! (and the five-input preparation) return exactly the source extent.

use crate::autodiff::{self, Var};
use crate::error::{Error, Result};
use crate::tensor::{kernels, Shape, Tensor};

/// The four half-resolution sub-images of one image.
#[derive(Clone, Debug)]
pub struct HaarDecomposition {
    /// Approximation ("zero-order") band.
    pub ll: Tensor,
    /// Horizontal-detail band (intensity changes along x).
    pub lh: Tensor,
    /// Vertical-detail band.
    pub hl: Tensor,
    /// Diagonal-detail band.
    pub hh: Tensor,
    source_h: usize,
    source_w: usize,
}

impl HaarDecomposition {
    /// Builds a decomposition from four equal-shaped bands. The source size
    /// is taken as exactly twice the band size.
    pub fn new(ll: Tensor, lh: Tensor, hl: Tensor, hh: Tensor) -> Result<Self> {
        let s = ll.shape();
        for (name, band) in [("lh", &lh), ("hl", &hl), ("hh", &hh)] {
            if band.shape() != s {
                return Err(Error::Shape(format!(
                    "sub-image {name} has shape {} but ll has {}",
                    band.shape(),
                    s
                )));
            }
        }
        Ok(HaarDecomposition { ll, lh, hl, hh, source_h: s.h * 2, source_w: s.w * 2 })
    }

    /// Spatial size of the image this decomposition came from.
    pub fn source_size(&self) -> (usize, usize) {
        (self.source_h, self.source_w)
    }

    pub fn band_shape(&self) -> Shape {
        self.ll.shape()
    }
}

/// Decomposes an image into four half-resolution sub-images. Odd spatial
/// dims are replicate-padded to even size first (never silently truncated).
pub fn haar_forward(image: &Tensor) -> Result<HaarDecomposition> {
    let s = image.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::Shape(format!("haar transform requires non-empty image, got {s}")));
    }
    let padded = if s.h % 2 != 0 || s.w % 2 != 0 {
        kernels::replicate_pad(image, s.h % 2 != 0, s.w % 2 != 0)?
    } else {
        image.clone()
    };
    let stacked = kernels::haar_stack(&padded)?;
    let c = s.c;
    Ok(HaarDecomposition {
        ll: kernels::slice_channels(&stacked, 0, c)?,
        lh: kernels::slice_channels(&stacked, c, c)?,
        hl: kernels::slice_channels(&stacked, 2 * c, c)?,
        hh: kernels::slice_channels(&stacked, 3 * c, c)?,
        source_h: s.h,
        source_w: s.w,
    })
}

/// Reconstructs the source image exactly (cropping away any padding added
/// for odd sizes).
pub fn haar_inverse(dec: &HaarDecomposition) -> Result<Tensor> {
    let s = dec.band_shape();
    for (name, band) in [("lh", &dec.lh), ("hl", &dec.hl), ("hh", &dec.hh)] {
        if band.shape() != s {
            return Err(Error::Shape(format!(
                "sub-image {name} has shape {} but ll has {}",
                band.shape(),
                s
            )));
        }
    }
    let stacked = kernels::concat_channels(
        &kernels::concat_channels(&dec.ll, &dec.lh)?,
        &kernels::concat_channels(&dec.hl, &dec.hh)?,
    )?;
    let full = kernels::haar_unstack(&stacked)?;
    if (full.shape().h, full.shape().w) == (dec.source_h, dec.source_w) {
        Ok(full)
    } else {
        kernels::crop(&full, dec.source_h, dec.source_w)
    }
}

/// The five network inputs: the image itself plus its four Haar bands
/// upsampled back to the image size by nearest-neighbor replication.
///
/// Order: `[image, ll, lh (x-direction), hl (y-direction), hh (diagonal)]`.
pub fn make_five_inputs(image: &Tensor) -> Result<[Tensor; 5]> {
    let s = image.shape();
    let dec = haar_forward(image)?;
    Ok([
        image.clone(),
        kernels::upsample_nearest(&dec.ll, s.h, s.w)?,
        kernels::upsample_nearest(&dec.lh, s.h, s.w)?,
        kernels::upsample_nearest(&dec.hl, s.h, s.w)?,
        kernels::upsample_nearest(&dec.hh, s.h, s.w)?,
    ])
}

/// Differentiable version of [`make_five_inputs`], used inside the network
/// forward pass so gradients reach the input image through every band.
pub fn make_five_inputs_var(image: &Var) -> Result<[Var; 5]> {
    let s = image.shape();
    let padded = if s.h % 2 != 0 || s.w % 2 != 0 {
        autodiff::replicate_pad(image, s.h % 2 != 0, s.w % 2 != 0)?
    } else {
        image.clone()
    };
    let stacked = autodiff::haar_stack(&padded)?;
    let c = s.c;
    let mut bands = Vec::with_capacity(4);
    for i in 0..4 {
        let band = autodiff::slice_channels(&stacked, i * c, c)?;
        bands.push(autodiff::upsample_nearest(&band, s.h, s.w)?);
    }
    let [b, cc, d, e]: [Var; 4] = bands.try_into().expect("four bands");
    Ok([image.clone(), b, cc, d, e])
}
