//! Synthetic ground-truth images and a parametric underwater-style
//! degradation, so training and evaluation are exercisable without any
//! external dataset.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ImagePair;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Shape, Tensor};

/// Parametric degradation: per-channel attenuation, ambient haze mix and
/// additive Gaussian noise. Deterministic per seed.
#[derive(Clone, Copy, Debug)]
pub struct DegradationSpec {
    /// Per-channel attenuation `(r, g, b)`, each in (0, 1].
    pub attenuation: [f64; 3],
    /// Haze strength; the ambient mix factor is `1 - exp(-beta)`.
    pub beta: f64,
    /// Ambient veil color, each channel in [0, 1].
    pub ambient: [f64; 3],
    /// Standard deviation of additive Gaussian noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec {
            attenuation: [1.0, 0.6, 0.5],
            beta: 0.3,
            ambient: [0.2, 0.5, 0.6],
            noise_sigma: 0.01,
            seed: 1,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, &a) in self.attenuation.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Config(format!(
                    "attenuation[{i}] must be in (0, 1], got {a}"
                )));
            }
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("haze beta must be >= 0, got {}", self.beta)));
        }
        for (i, &a) in self.ambient.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("ambient[{i}] must be in [0, 1], got {a}")));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; 1 - u keeps the log argument strictly positive.
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Applies the degradation model per channel:
/// `clamp(gt*a + (1 - e^(-beta)) * (ambient - gt*a) + noise, 0, 1)`.
pub fn synth_degrade(gt: &Tensor, spec: &DegradationSpec) -> Result<Tensor> {
    spec.validate()?;
    let s = gt.shape();
    if s.c != 3 {
        return Err(Error::Shape(format!("degradation expects 3-channel images, got {s}")));
    }
    let mix = 1.0 - (-spec.beta).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = gt.data();
    let hw = s.h * s.w;
    let mut out = vec![0.0; s.numel()];
    for n in 0..s.n {
        for c in 0..3 {
            let a = spec.attenuation[c];
            let ambient = spec.ambient[c];
            let src = &d[s.plane(n, c)..s.plane(n, c) + hw];
            let dst = &mut out[s.plane(n, c)..s.plane(n, c) + hw];
            for i in 0..hw {
                let direct = src[i] * a;
                let noise = if spec.noise_sigma > 0.0 { spec.noise_sigma * gaussian(&mut rng) } else { 0.0 };
                dst[i] = (direct + mix * (ambient - direct) + noise).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_vec(s, out)
}

/// Procedural ground-truth image: a smooth two-color gradient with a few
/// soft blobs, deterministic per seed.
pub fn synth_image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());

    struct Blob {
        cx: f64,
        cy: f64,
        r: f64,
        color: [f64; 3],
    }
    let blobs: Vec<Blob> = (0..4)
        .map(|_| Blob {
            cx: rng.random_range(0.0..1.0),
            cy: rng.random_range(0.0..1.0),
            r: rng.random_range(0.08..0.3),
            color: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
        })
        .collect();

    let s = Shape::new(1, 3, h, w);
    let mut data = vec![0.0; s.numel()];
    for y in 0..h {
        for x in 0..w {
            let fx = x as f64 / w.max(1) as f64;
            let fy = y as f64 / h.max(1) as f64;
            let t = ((fx * gx + fy * gy) + 1.0) / 2.0;
            let mut px: [f64; 3] = std::array::from_fn(|c| c0[c] + (c1[c] - c0[c]) * t);
            for b in &blobs {
                let d2 = (fx - b.cx).powi(2) + (fy - b.cy).powi(2);
                let alpha = (-d2 / (b.r * b.r)).exp();
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - alpha) + b.color[c] * alpha;
                }
            }
            for c in 0..3 {
                data[s.idx(0, c, y, x)] = px[c].clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_vec(s, data).expect("shape matches")
}

/// Generates `count` synthetic pairs: procedural ground truth plus its
/// degraded version, with per-pair derived seeds.
pub fn synth_pairs(count: usize, h: usize, w: usize, spec: &DegradationSpec, seed: u64) -> Result<Vec<ImagePair>> {
    (0..count)
        .map(|i| {
            let gt = synth_image(h, w, rng::derive2(seed, 0xA11CE, i as u64));
            let per_pair = DegradationSpec {
                seed: rng::derive2(spec.seed, 0xDE612ADE, i as u64),
                ..*spec
            };
            Ok(ImagePair {
                id: format!("synth_{i:04}"),
                degraded: synth_degrade(&gt, &per_pair)?,
                ground_truth: gt,
            })
        })
        .collect()
}
