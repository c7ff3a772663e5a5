//! Test-support oracles: independent reference implementations (direct
//! nested-loop convolution/pooling, sliding-window SSIM), finite-difference
//! gradient checking, and straight-line transcriptions of the network
//! equations. Everything here is written against the public op surface or
//! from scratch, separately from the modular implementations it checks.
//!
//! Compiled only for tests (`testkit` feature); not part of the library API.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rand::Rng;

use crate::autodiff::{GradTape, Var};
use crate::error::Result;
use crate::net::params::{
    CbamParams, ConvsParams, FusionParams, NetworkParams, RfmHaarParams, RfuParams,
};
use crate::net::ConfidenceNorm;
use crate::tensor::{
    add, concat_channels, conv2d, maxpool2d, mul, relu, sigmoid, slice_channels, Activation,
    ConvParams, Shape, Tensor,
};

// ── Direct reference implementations ───────────────────────────────────

/// Quadruple-loop convolution evaluated per output element.
pub fn conv2d_reference(input: &Tensor, weight: &Tensor, bias: &Tensor, pad: usize) -> Tensor {
    let is = input.shape();
    let ws = weight.shape();
    let k = ws.h;
    let oh = is.h + 2 * pad + 1 - k;
    let ow = is.w + 2 * pad + 1 - k;
    let os = Shape::new(is.n, ws.n, oh, ow);
    let mut out = vec![0.0; os.numel()];
    for n in 0..is.n {
        for oc in 0..ws.n {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias.data()[oc];
                    for ic in 0..is.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as i64 + ky as i64 - pad as i64;
                                let ix = x as i64 + kx as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= is.h as i64 || ix >= is.w as i64 {
                                    continue;
                                }
                                acc += weight.data()[ws.idx(oc, ic, ky, kx)]
                                    * input.data()[is.idx(n, ic, iy as usize, ix as usize)];
                            }
                        }
                    }
                    out[os.idx(n, oc, y, x)] = acc;
                }
            }
        }
    }
    Tensor::from_vec(os, out).unwrap()
}

/// Windowed max with zero padding, evaluated per output element.
pub fn maxpool2d_reference(input: &Tensor) -> Tensor {
    let s = input.shape();
    let mut out = vec![0.0; s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut best = f64::NEG_INFINITY;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (iy, ix) = (y as i64 + dy, x as i64 + dx);
                            let v = if iy >= 0 && ix >= 0 && iy < s.h as i64 && ix < s.w as i64 {
                                input.data()[s.idx(n, c, iy as usize, ix as usize)]
                            } else {
                                0.0
                            };
                            best = best.max(v);
                        }
                    }
                    out[s.idx(n, c, y, x)] = best;
                }
            }
        }
    }
    Tensor::from_vec(s, out).unwrap()
}

/// Windowed mean with divisor 9, evaluated per output element.
pub fn avgpool2d_reference(input: &Tensor) -> Tensor {
    let s = input.shape();
    let mut out = vec![0.0; s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut acc = 0.0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (iy, ix) = (y as i64 + dy, x as i64 + dx);
                            if iy >= 0 && ix >= 0 && iy < s.h as i64 && ix < s.w as i64 {
                                acc += input.data()[s.idx(n, c, iy as usize, ix as usize)];
                            }
                        }
                    }
                    out[s.idx(n, c, y, x)] = acc / 9.0;
                }
            }
        }
    }
    Tensor::from_vec(s, out).unwrap()
}

/// Nearest-neighbor upsampling from the index formula.
pub fn upsample_reference(input: &Tensor, th: usize, tw: usize) -> Tensor {
    let s = input.shape();
    let os = Shape::new(s.n, s.c, th, tw);
    let mut out = vec![0.0; os.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..th {
                for x in 0..tw {
                    out[os.idx(n, c, y, x)] =
                        input.data()[s.idx(n, c, y * s.h / th, x * s.w / tw)];
                }
            }
        }
    }
    Tensor::from_vec(os, out).unwrap()
}

/// 2x2 block transform from the analysis matrix, returning `(ll, lh, hl, hh)`.
pub fn haar_reference(input: &Tensor) -> (Tensor, Tensor, Tensor, Tensor) {
    let s = input.shape();
    assert!(s.h % 2 == 0 && s.w % 2 == 0);
    let bs = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut bands = [vec![0.0; bs.numel()], vec![0.0; bs.numel()], vec![0.0; bs.numel()], vec![0.0; bs.numel()]];
    for n in 0..s.n {
        for c in 0..s.c {
            for by in 0..bs.h {
                for bx in 0..bs.w {
                    let a = input.data()[s.idx(n, c, 2 * by, 2 * bx)];
                    let b = input.data()[s.idx(n, c, 2 * by, 2 * bx + 1)];
                    let cc = input.data()[s.idx(n, c, 2 * by + 1, 2 * bx)];
                    let d = input.data()[s.idx(n, c, 2 * by + 1, 2 * bx + 1)];
                    let i = bs.idx(n, c, by, bx);
                    bands[0][i] = (a + b + cc + d) / 2.0;
                    bands[1][i] = (a - b + cc - d) / 2.0;
                    bands[2][i] = (a + b - cc - d) / 2.0;
                    bands[3][i] = (a - b - cc + d) / 2.0;
                }
            }
        }
    }
    let [ll, lh, hl, hh] = bands;
    (
        Tensor::from_vec(bs, ll).unwrap(),
        Tensor::from_vec(bs, lh).unwrap(),
        Tensor::from_vec(bs, hl).unwrap(),
        Tensor::from_vec(bs, hh).unwrap(),
    )
}

/// Sliding-window SSIM with an independently constructed Gaussian window.
pub fn ssim_reference(x: &Tensor, y: &Tensor) -> f64 {
    let s = x.shape();
    assert_eq!(s, y.shape());
    let mut win = 11usize.min(s.h).min(s.w);
    if win % 2 == 0 {
        win -= 1;
    }
    let sigma = 1.5;
    let half = (win as f64 - 1.0) / 2.0;
    let mut weights = vec![0.0; win * win];
    let mut norm = 0.0;
    for wy in 0..win {
        for wx in 0..win {
            let d2 = (wy as f64 - half).powi(2) + (wx as f64 - half).powi(2);
            let g = (-d2 / (2.0 * sigma * sigma)).exp();
            weights[wy * win + wx] = g;
            norm += g;
        }
    }
    for w in weights.iter_mut() {
        *w /= norm;
    }

    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (oh, ow) = (s.h - win + 1, s.w - win + 1);
    let mut acc = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            for y0 in 0..oh {
                for x0 in 0..ow {
                    let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for wy in 0..win {
                        for wx in 0..win {
                            let w = weights[wy * win + wx];
                            let xv = x.data()[s.idx(n, c, y0 + wy, x0 + wx)];
                            let yv = y.data()[s.idx(n, c, y0 + wy, x0 + wx)];
                            mx += w * xv;
                            my += w * yv;
                            mxx += w * xv * xv;
                            myy += w * yv * yv;
                            mxy += w * xv * yv;
                        }
                    }
                    let (sx, sy, sxy) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
                    let v = ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                        / ((mx * mx + my * my + c1) * (sx + sy + c2));
                    acc += v;
                    count += 1;
                }
            }
        }
    }
    acc / count as f64
}

// ── Finite-difference gradient checking ─────────────────────────────────

/// Result of one gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coordinates_checked: usize,
    /// Coordinates where no smooth finite-difference stencil was found (a
    /// relu/max kink closer than the smallest step tried).
    pub coordinates_skipped: usize,
}

/// Central finite differences vs reverse-mode gradients.
///
/// `build` maps leaf vars to a scalar loss var. Each input tensor is checked
/// at every coordinate when small, otherwise at `max_coords` seeded random
/// coordinates.
///
/// The network is piecewise smooth (relu, windowed max), so a difference
/// stencil can straddle a kink where the two one-sided derivatives differ.
/// Such stencils are detected by step-halving consistency — for a locally
/// smooth function the estimates at `eps` and `eps/2` agree to O(eps^2) —
/// and the step is shrunk until the stencil is smooth, which compares the
/// analytic gradient at full precision wherever the derivative exists. The
/// relative error denominator is floored at 1e-2 so tiny gradients are
/// compared absolutely.
pub fn check_gradients(
    build: &dyn Fn(&[Var]) -> Result<Var>,
    inputs: &[Tensor],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let leaves: Vec<Var> = inputs.iter().map(|t| Var::param(t.clone())).collect();
    let loss = build(&leaves)?;
    let tape = GradTape::backward(&loss)?;
    let analytic: Vec<Tensor> = leaves.iter().map(|v| tape.grad_or_zeros(v)).collect();

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let vars: Vec<Var> = tensors.iter().map(|t| Var::constant(t.clone())).collect();
        build(&vars)?.scalar_value()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        let n = tensor.numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|_| rng.random_range(0..n)).collect()
        };
        for &j in &coords {
            let mut central = |step: f64| -> Result<f64> {
                let mut plus = tensor.data().to_vec();
                plus[j] += step;
                work[ti] = Tensor::from_vec(tensor.shape(), plus)?;
                let f_plus = eval(&work)?;
                let mut minus = tensor.data().to_vec();
                minus[j] -= step;
                work[ti] = Tensor::from_vec(tensor.shape(), minus)?;
                let f_minus = eval(&work)?;
                Ok((f_plus - f_minus) / (2.0 * step))
            };

            let mut numeric = None;
            let mut step = eps;
            for _ in 0..4 {
                let n1 = central(step)?;
                let n2 = central(step / 2.0)?;
                if (n1 - n2).abs() <= 1e-5 * n1.abs().max(n2.abs()).max(1e-2) {
                    numeric = Some(n2);
                    break;
                }
                step /= 10.0;
            }
            work[ti] = tensor.clone();

            let Some(numeric) = numeric else {
                skipped += 1;
                continue;
            };
            let a = analytic[ti].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_err: max_rel, coordinates_checked: checked, coordinates_skipped: skipped })
}

// ── Straight-line transcriptions of the network equations ───────────────

fn pool_if(t: Tensor, enabled: bool) -> Result<Tensor> {
    if enabled {
        maxpool2d(&t)
    } else {
        Ok(t)
    }
}

/// Fusion unit, transcribed term by term.
pub fn oracle_rfu(input1: &Tensor, input2: &Tensor, p: &RfuParams) -> Result<Tensor> {
    let m_a = pool_if(
        conv2d(&conv2d(input2, &p.reinf_path.conv1, Activation::Relu)?, &p.reinf_path.conv3, Activation::Relu)?,
        p.use_maxpool,
    )?;
    let m_f = match &p.mlp {
        Some(mlp) => {
            let inner = relu(&conv2d(input1, &mlp.conv_a, Activation::None)?);
            let m_b = sigmoid(&conv2d(&inner, &mlp.conv_b, Activation::None)?);
            add(&m_a, &m_b)?
        }
        None => m_a,
    };
    match &p.base_path {
        Some(base) => {
            let i_b = pool_if(
                conv2d(&conv2d(input1, &base.conv1, Activation::Relu)?, &base.conv5, Activation::Relu)?,
                p.use_maxpool,
            )?;
            mul(&i_b, &m_f)
        }
        None => Ok(m_f),
    }
}

/// Fusion module chain, transcribed stage by stage.
pub fn oracle_rfm(inputs: &[Tensor; 5], p: &RfmHaarParams) -> Result<Tensor> {
    let re = |i: usize, x: &Tensor, u: &Tensor| -> Result<Tensor> {
        match &p.res {
            Some(res) => add(u, &conv2d(x, &res[i], Activation::None)?),
            None => Ok(u.clone()),
        }
    };
    let u1 = oracle_rfu(&inputs[0], &inputs[1], &p.rfus[0])?;
    let x2 = re(0, &inputs[0], &u1)?;
    let u2 = oracle_rfu(&x2, &inputs[2], &p.rfus[1])?;
    let x3 = re(1, &x2, &u2)?;
    let u3 = oracle_rfu(&x3, &inputs[3], &p.rfus[2])?;
    let x4 = concat_channels(&x3, &re(2, &x3, &u3)?)?;
    let u4 = oracle_rfu(&x4, &inputs[4], &p.rfus[3])?;
    concat_channels(&x2, &re(3, &x4, &u4)?)
}

/// Plain six-convolution ablation block.
pub fn oracle_convs(inputs: &[Tensor; 5], p: &ConvsParams) -> Result<Tensor> {
    let mut x = inputs[0].clone();
    for t in &inputs[1..] {
        x = concat_channels(&x, t)?;
    }
    let last = p.convs.len() - 1;
    for (i, conv) in p.convs.iter().enumerate() {
        let act = if i < last { Activation::Relu } else { Activation::None };
        x = conv2d(&x, conv, act)?;
    }
    Ok(x)
}

/// Attention block, transcribed term by term.
pub fn oracle_cbam(f0: &Tensor, p: &CbamParams) -> Result<Tensor> {
    let mlp = |x: &Tensor| -> Result<Tensor> {
        conv2d(&relu(&conv2d(x, &p.mlp_a, Activation::None)?), &p.mlp_b, Activation::None)
    };
    let s = sigmoid(&add(
        &mlp(&crate::tensor::avgpool2d(f0)?)?,
        &mlp(&maxpool2d(f0)?)?,
    )?);
    let f1 = mul(f0, &s)?;
    let pooled = concat_channels(&crate::tensor::avgpool2d(&f1)?, &maxpool2d(&f1)?)?;
    let f1p = sigmoid(&conv2d(&pooled, &p.spatial, Activation::None)?);
    mul(&f1, &f1p)
}

/// Projection + weight generator + four-way gated sum, transcribed term by
/// term.
pub fn oracle_gated(
    f2: &Tensor,
    f3_proj: &ConvParams,
    weight_gen: &[ConvParams; 5],
    norm: ConfidenceNorm,
) -> Result<Tensor> {
    let f3 = conv2d(f2, f3_proj, Activation::Relu)?;
    let mut w = f2.clone();
    for conv in weight_gen {
        w = conv2d(&w, conv, Activation::Relu)?;
    }

    let feat: Vec<Tensor> = (0..4).map(|i| slice_channels(&f3, 3 * i, 3)).collect::<Result<_>>()?;
    let mut conf: Vec<Tensor> = (0..4).map(|i| slice_channels(&w, 3 * i, 3)).collect::<Result<_>>()?;
    match norm {
        ConfidenceNorm::Raw => {}
        ConfidenceNorm::Sigmoid => {
            for c in conf.iter_mut() {
                *c = sigmoid(c);
            }
        }
        ConfidenceNorm::Softmax => {
            let exps: Vec<Tensor> = conf.iter().map(|c| c.map(f64::exp)).collect();
            let denom = add(&add(&exps[0], &exps[1])?, &exps[2])?;
            let denom = add(&denom, &exps[3])?;
            conf = exps
                .iter()
                .map(|e| Ok(crate::tensor::kernels::zip_map(e, &denom, |a, b| a / b)))
                .collect::<Result<_>>()?;
        }
    }

    let mut out = mul(&feat[0], &conf[0])?;
    for i in 1..4 {
        out = add(&out, &mul(&feat[i], &conf[i])?)?;
    }
    Ok(out)
}

/// Whole network, transcribed stage by stage, honoring all ablation flags.
pub fn oracle_hifi_forward(image: &Tensor, p: &NetworkParams) -> Result<Tensor> {
    let five: [Tensor; 5] = if p.config.use_haar {
        crate::haar::make_five_inputs(image)?
    } else {
        std::array::from_fn(|_| image.clone())
    };
    let f0 = match &p.fusion {
        FusionParams::RfmHaar(rfm) => oracle_rfm(&five, rfm)?,
        FusionParams::Convs(convs) => oracle_convs(&five, convs)?,
    };
    let f2 = match &p.cbam {
        Some(cbam) => oracle_cbam(&f0, cbam)?,
        None => f0,
    };
    oracle_gated(&f2, &p.f3_proj, &p.weight_gen, p.config.confidence_norm)
}
