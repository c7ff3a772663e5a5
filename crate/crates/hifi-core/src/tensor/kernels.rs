//! Raw forward/backward arithmetic for every tensor operation.
//!
//! These functions are pure and deterministic: each output element is
//! produced by exactly one task with a fixed accumulation order, so results
//! are bit-identical across runs and thread counts.

use rayon::prelude::*;

use super::{Activation, Shape, Tensor};
use crate::error::{Error, Result};

/// Pairwise (tree) summation. More accurate than sequential accumulation and
/// exact for the uniform-value sums the loss tests rely on.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

pub fn mean_all(t: &Tensor) -> f64 {
    pairwise_sum(t.data()) / t.numel() as f64
}

pub fn sum_all(t: &Tensor) -> f64 {
    pairwise_sum(t.data())
}

fn conv_out_dim(in_dim: usize, k: usize, pad: usize) -> Result<usize> {
    (in_dim + 2 * pad + 1)
        .checked_sub(k)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::shape(format!("kernel {k} exceeds padded input extent {in_dim}+2*{pad}")))
}

/// Convolution, stride 1, zero padding `pad`, optional fused activation.
///
/// `weight` is `(out_ch, in_ch, k, k)`, `bias` is `(1, out_ch, 1, 1)`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    pad: usize,
    act: Activation,
) -> Result<Tensor> {
    let is = input.shape();
    let ws = weight.shape();
    if ws.h != ws.w {
        return Err(Error::config(format!("convolution kernel must be square, got {ws}")));
    }
    if is.c != ws.c {
        return Err(Error::shape(format!(
            "conv2d input has {} channels but weight expects {}",
            is.c, ws.c
        )));
    }
    if bias.shape() != Shape::new(1, ws.n, 1, 1) {
        return Err(Error::shape(format!(
            "conv2d bias shape {} does not match {} output channels",
            bias.shape(),
            ws.n
        )));
    }
    let k = ws.h;
    let oh = conv_out_dim(is.h, k, pad)?;
    let ow = conv_out_dim(is.w, k, pad)?;
    let os = Shape::new(is.n, ws.n, oh, ow);

    let in_data = input.data();
    let w_data = weight.data();
    let b_data = bias.data();
    let (h, w) = (is.h, is.w);

    let mut out = vec![0.0; os.numel()];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane_idx, out_plane)| {
        let n = plane_idx / ws.n;
        let oc = plane_idx % ws.n;
        out_plane.fill(b_data[oc]);
        for ic in 0..is.c {
            let in_plane = &in_data[is.plane(n, ic)..is.plane(n, ic) + h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w_data[ws.idx(oc, ic, ky, kx)];
                    let x_lo = pad.saturating_sub(kx);
                    let x_hi = ow.min((w + pad).saturating_sub(kx));
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in 0..oh {
                        let iy = y + ky;
                        if iy < pad || iy >= h + pad {
                            continue;
                        }
                        let in_row = &in_plane[(iy - pad) * w..(iy - pad) * w + w];
                        let out_row = &mut out_plane[y * ow..y * ow + ow];
                        if kx >= pad {
                            let shift = kx - pad;
                            for x in x_lo..x_hi {
                                out_row[x] += wv * in_row[x + shift];
                            }
                        } else {
                            let shift = pad - kx;
                            for x in x_lo..x_hi {
                                out_row[x] += wv * in_row[x - shift];
                            }
                        }
                    }
                }
            }
        }
        if act == Activation::Relu {
            for v in out_plane.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    });

    Tensor::from_vec(os, out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
///
/// `grad_out` must already account for the fused activation (callers mask it
/// with [`relu_backward`] first when the forward pass used ReLU).
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    pad: usize,
    grad_out: &Tensor,
    need_input: bool,
    need_weight: bool,
) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
    let is = input.shape();
    let ws = weight.shape();
    let gs = grad_out.shape();
    let k = ws.h;
    let (h, w) = (is.h, is.w);
    let (oh, ow) = (gs.h, gs.w);
    let g_data = grad_out.data();
    let in_data = input.data();
    let w_data = weight.data();

    // bias: sum of grad_out over batch and spatial dims, per output channel
    let grad_bias = {
        let mut gb = vec![0.0; ws.n];
        for n in 0..gs.n {
            for oc in 0..ws.n {
                let plane = &g_data[gs.plane(n, oc)..gs.plane(n, oc) + oh * ow];
                gb[oc] += pairwise_sum(plane);
            }
        }
        Tensor::from_vec(Shape::new(1, ws.n, 1, 1), gb)?
    };

    let grad_weight = if need_weight {
        let mut gw = vec![0.0; ws.numel()];
        gw.par_chunks_mut(ws.c * k * k).enumerate().for_each(|(oc, gw_oc)| {
            for n in 0..gs.n {
                let g_plane = &g_data[gs.plane(n, oc)..gs.plane(n, oc) + oh * ow];
                for ic in 0..is.c {
                    let in_plane = &in_data[is.plane(n, ic)..is.plane(n, ic) + h * w];
                    for ky in 0..k {
                        for kx in 0..k {
                            let x_lo = pad.saturating_sub(kx);
                            let x_hi = ow.min((w + pad).saturating_sub(kx));
                            if x_lo >= x_hi {
                                continue;
                            }
                            let mut acc = 0.0;
                            for y in 0..oh {
                                let iy = y + ky;
                                if iy < pad || iy >= h + pad {
                                    continue;
                                }
                                let in_row = &in_plane[(iy - pad) * w..(iy - pad) * w + w];
                                let g_row = &g_plane[y * ow..y * ow + ow];
                                if kx >= pad {
                                    let shift = kx - pad;
                                    for x in x_lo..x_hi {
                                        acc += g_row[x] * in_row[x + shift];
                                    }
                                } else {
                                    let shift = pad - kx;
                                    for x in x_lo..x_hi {
                                        acc += g_row[x] * in_row[x - shift];
                                    }
                                }
                            }
                            gw_oc[(ic * k + ky) * k + kx] += acc;
                        }
                    }
                }
            }
        });
        Some(Tensor::from_vec(ws, gw)?)
    } else {
        None
    };

    let grad_input = if need_input {
        let mut gi = vec![0.0; is.numel()];
        gi.par_chunks_mut(h * w).enumerate().for_each(|(plane_idx, gi_plane)| {
            let n = plane_idx / is.c;
            let ic = plane_idx % is.c;
            for oc in 0..ws.n {
                let g_plane = &g_data[gs.plane(n, oc)..gs.plane(n, oc) + oh * ow];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w_data[ws.idx(oc, ic, ky, kx)];
                        let x_lo = pad.saturating_sub(kx);
                        let x_hi = ow.min((w + pad).saturating_sub(kx));
                        if x_lo >= x_hi {
                            continue;
                        }
                        for y in 0..oh {
                            let iy = y + ky;
                            if iy < pad || iy >= h + pad {
                                continue;
                            }
                            let gi_row = &mut gi_plane[(iy - pad) * w..(iy - pad) * w + w];
                            let g_row = &g_plane[y * ow..y * ow + ow];
                            if kx >= pad {
                                let shift = kx - pad;
                                for x in x_lo..x_hi {
                                    gi_row[x + shift] += wv * g_row[x];
                                }
                            } else {
                                let shift = pad - kx;
                                for x in x_lo..x_hi {
                                    gi_row[x - shift] += wv * g_row[x];
                                }
                            }
                        }
                    }
                }
            }
        });
        Some(Tensor::from_vec(is, gi)?)
    } else {
        None
    };

    Ok((grad_input, grad_weight, Some(grad_bias)))
}

fn check_pool_input(input: &Tensor) -> Result<Shape> {
    let s = input.shape();
    if s.numel() == 0 {
        return Err(Error::shape(format!("pooling requires a non-empty tensor, got {s}")));
    }
    Ok(s)
}

/// Max over the 3x3 window centered at `(y, x)` with zero padding.
///
/// Returns the max value and the flat plane index of the winning cell, or
/// `None` when a padding zero wins. The scan order (row-major over the
/// window, first strict max wins) is shared by forward and backward.
#[inline]
fn window_max(plane: &[f64], h: usize, w: usize, y: usize, x: usize) -> (f64, Option<usize>) {
    let mut best = f64::NEG_INFINITY;
    let mut best_src = None;
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let iy = y as i64 + dy;
            let ix = x as i64 + dx;
            let (v, src) = if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                let idx = iy as usize * w + ix as usize;
                (plane[idx], Some(idx))
            } else {
                (0.0, None)
            };
            if v > best {
                best = v;
                best_src = src;
            }
        }
    }
    (best, best_src)
}

/// Max pooling: kernel 3, stride 1, zero padding 1 (padding competes in the max).
pub fn maxpool2d(input: &Tensor) -> Result<Tensor> {
    let s = check_pool_input(input)?;
    let in_data = input.data();
    let mut out = vec![0.0; s.numel()];
    let (h, w) = (s.h, s.w);
    out.par_chunks_mut(h * w).enumerate().for_each(|(plane_idx, out_plane)| {
        let plane = &in_data[plane_idx * h * w..(plane_idx + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                out_plane[y * w + x] = window_max(plane, h, w, y, x).0;
            }
        }
    });
    Tensor::from_vec(s, out)
}

pub fn maxpool2d_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    let in_data = input.data();
    let g_data = grad_out.data();
    let (h, w) = (s.h, s.w);
    let mut gi = vec![0.0; s.numel()];
    gi.par_chunks_mut(h * w).enumerate().for_each(|(plane_idx, gi_plane)| {
        let plane = &in_data[plane_idx * h * w..(plane_idx + 1) * h * w];
        let g_plane = &g_data[plane_idx * h * w..(plane_idx + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                if let (_, Some(src)) = window_max(plane, h, w, y, x) {
                    gi_plane[src] += g_plane[y * w + x];
                }
            }
        }
    });
    Tensor::from_vec(s, gi)
}

/// Average pooling: kernel 3, stride 1, zero padding 1, divisor fixed at 9.
pub fn avgpool2d(input: &Tensor) -> Result<Tensor> {
    let s = check_pool_input(input)?;
    let in_data = input.data();
    let mut out = vec![0.0; s.numel()];
    let (h, w) = (s.h, s.w);
    out.par_chunks_mut(h * w).enumerate().for_each(|(plane_idx, out_plane)| {
        let plane = &in_data[plane_idx * h * w..(plane_idx + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let iy = y as i64 + dy;
                        let ix = x as i64 + dx;
                        if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                            acc += plane[iy as usize * w + ix as usize];
                        }
                    }
                }
                out_plane[y * w + x] = acc / 9.0;
            }
        }
    });
    Tensor::from_vec(s, out)
}

pub fn avgpool2d_backward(input_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let s = input_shape;
    let g_data = grad_out.data();
    let (h, w) = (s.h, s.w);
    let mut gi = vec![0.0; s.numel()];
    gi.par_chunks_mut(h * w).enumerate().for_each(|(plane_idx, gi_plane)| {
        let g_plane = &g_data[plane_idx * h * w..(plane_idx + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let g = g_plane[y * w + x] / 9.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let iy = y as i64 + dy;
                        let ix = x as i64 + dx;
                        if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                            gi_plane[iy as usize * w + ix as usize] += g;
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(s, gi)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// d(relu)/dx masked by the *output* (output > 0 iff input > 0 a.e.).
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
        .collect();
    Tensor { shape: output.shape(), data: std::sync::Arc::new(data), requires_grad: false }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    zip_map(output, grad_out, |o, g| g * o * (1.0 - o))
}

pub fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor { shape: a.shape(), data: std::sync::Arc::new(data), requires_grad: false }
}

/// Elementwise binary op; `b` may have one channel, copied across `a`'s channels.
pub fn binary_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        return Ok(zip_map(a, b, f));
    }
    if sb.c == 1 && sa.n == sb.n && sa.same_spatial(&sb) {
        let mut out = vec![0.0; sa.numel()];
        let (ad, bd) = (a.data(), b.data());
        let hw = sa.h * sa.w;
        for n in 0..sa.n {
            let b_plane = &bd[sb.plane(n, 0)..sb.plane(n, 0) + hw];
            for c in 0..sa.c {
                let a_plane = &ad[sa.plane(n, c)..sa.plane(n, c) + hw];
                let o_plane = &mut out[sa.plane(n, c)..sa.plane(n, c) + hw];
                for i in 0..hw {
                    o_plane[i] = f(a_plane[i], b_plane[i]);
                }
            }
        }
        return Tensor::from_vec(sa, out);
    }
    Err(Error::shape(format!(
        "incompatible shapes {sa} and {sb} (equal shapes or one-channel second operand required)"
    )))
}

/// Reduces a full-shaped gradient to the one-channel broadcast operand by
/// summing over channels.
pub fn collapse_to_one_channel(grad: &Tensor, target: Shape) -> Result<Tensor> {
    let gs = grad.shape();
    let mut out = vec![0.0; target.numel()];
    let gd = grad.data();
    let hw = gs.h * gs.w;
    for n in 0..gs.n {
        let o_plane = &mut out[target.plane(n, 0)..target.plane(n, 0) + hw];
        for c in 0..gs.c {
            let g_plane = &gd[gs.plane(n, c)..gs.plane(n, c) + hw];
            for i in 0..hw {
                o_plane[i] += g_plane[i];
            }
        }
    }
    Tensor::from_vec(target, out)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || !sa.same_spatial(&sb) {
        return Err(Error::shape(format!("cannot concat {sa} with {sb}: batch/spatial mismatch")));
    }
    let os = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut out = vec![0.0; os.numel()];
    let hw = sa.h * sa.w;
    let (ad, bd) = (a.data(), b.data());
    for n in 0..sa.n {
        for c in 0..sa.c {
            out[os.plane(n, c)..os.plane(n, c) + hw].copy_from_slice(&ad[sa.plane(n, c)..sa.plane(n, c) + hw]);
        }
        for c in 0..sb.c {
            out[os.plane(n, sa.c + c)..os.plane(n, sa.c + c) + hw]
                .copy_from_slice(&bd[sb.plane(n, c)..sb.plane(n, c) + hw]);
        }
    }
    Tensor::from_vec(os, out)
}

pub fn slice_channels(input: &Tensor, start: usize, count: usize) -> Result<Tensor> {
    let s = input.shape();
    if start + count > s.c {
        return Err(Error::shape(format!(
            "channel slice [{start}, {}) out of range for {} channels",
            start + count,
            s.c
        )));
    }
    let os = Shape::new(s.n, count, s.h, s.w);
    let mut out = vec![0.0; os.numel()];
    let hw = s.h * s.w;
    let d = input.data();
    for n in 0..s.n {
        for c in 0..count {
            out[os.plane(n, c)..os.plane(n, c) + hw]
                .copy_from_slice(&d[s.plane(n, start + c)..s.plane(n, start + c) + hw]);
        }
    }
    Tensor::from_vec(os, out)
}

/// Scatters a channel-slice gradient back into a zero tensor of shape `full`.
pub fn slice_channels_backward(grad: &Tensor, full: Shape, start: usize) -> Result<Tensor> {
    let gs = grad.shape();
    let mut out = vec![0.0; full.numel()];
    let hw = full.h * full.w;
    let gd = grad.data();
    for n in 0..gs.n {
        for c in 0..gs.c {
            out[full.plane(n, start + c)..full.plane(n, start + c) + hw]
                .copy_from_slice(&gd[gs.plane(n, c)..gs.plane(n, c) + hw]);
        }
    }
    Tensor::from_vec(full, out)
}

pub fn upsample_nearest(input: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let s = input.shape();
    if target_h == 0 || target_w == 0 {
        return Err(Error::shape("upsample target size must be positive".to_string()));
    }
    if target_h < s.h || target_w < s.w {
        return Err(Error::shape(format!(
            "upsample target {target_h}x{target_w} smaller than source {}x{}",
            s.h, s.w
        )));
    }
    let os = Shape::new(s.n, s.c, target_h, target_w);
    let src_y: Vec<usize> = (0..target_h).map(|y| y * s.h / target_h).collect();
    let src_x: Vec<usize> = (0..target_w).map(|x| x * s.w / target_w).collect();
    let mut out = vec![0.0; os.numel()];
    let d = input.data();
    let hw = s.h * s.w;
    out.par_chunks_mut(target_h * target_w).enumerate().for_each(|(plane_idx, out_plane)| {
        let plane = &d[plane_idx * hw..(plane_idx + 1) * hw];
        for y in 0..target_h {
            let row = &plane[src_y[y] * s.w..src_y[y] * s.w + s.w];
            for x in 0..target_w {
                out_plane[y * target_w + x] = row[src_x[x]];
            }
        }
    });
    Tensor::from_vec(os, out)
}

pub fn upsample_nearest_backward(input_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let s = input_shape;
    let gs = grad_out.shape();
    let src_y: Vec<usize> = (0..gs.h).map(|y| y * s.h / gs.h).collect();
    let src_x: Vec<usize> = (0..gs.w).map(|x| x * s.w / gs.w).collect();
    let mut gi = vec![0.0; s.numel()];
    let gd = grad_out.data();
    let hw = s.h * s.w;
    gi.par_chunks_mut(hw).enumerate().for_each(|(plane_idx, gi_plane)| {
        let g_plane = &gd[plane_idx * gs.h * gs.w..(plane_idx + 1) * gs.h * gs.w];
        for y in 0..gs.h {
            for x in 0..gs.w {
                gi_plane[src_y[y] * s.w + src_x[x]] += g_plane[y * gs.w + x];
            }
        }
    });
    Tensor::from_vec(s, gi)
}

/// Keeps every second pixel starting at (0, 0); the stride-2 view used by the
/// perceptual feature extractor.
pub fn subsample2(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::shape("subsample requires non-empty spatial dims".to_string()));
    }
    let (oh, ow) = (s.h.div_ceil(2), s.w.div_ceil(2));
    let os = Shape::new(s.n, s.c, oh, ow);
    let mut out = vec![0.0; os.numel()];
    let d = input.data();
    let hw = s.h * s.w;
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane_idx, out_plane)| {
        let plane = &d[plane_idx * hw..(plane_idx + 1) * hw];
        for y in 0..oh {
            for x in 0..ow {
                out_plane[y * ow + x] = plane[(2 * y) * s.w + 2 * x];
            }
        }
    });
    Tensor::from_vec(os, out)
}

pub fn subsample2_backward(input_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let s = input_shape;
    let gs = grad_out.shape();
    let mut gi = vec![0.0; s.numel()];
    let gd = grad_out.data();
    gi.par_chunks_mut(s.h * s.w).enumerate().for_each(|(plane_idx, gi_plane)| {
        let g_plane = &gd[plane_idx * gs.h * gs.w..(plane_idx + 1) * gs.h * gs.w];
        for y in 0..gs.h {
            for x in 0..gs.w {
                gi_plane[(2 * y) * s.w + 2 * x] = g_plane[y * gs.w + x];
            }
        }
    });
    Tensor::from_vec(s, gi)
}

/// One-level 2D Haar transform with orthonormal scaling, all four bands
/// stacked along the channel axis as `[ll | lh | hl | hh]`, each of shape
/// `(n, c, h/2, w/2)`. Requires even spatial dims.
///
/// Per 2x2 block `[[a, b], [c, d]]`:
/// `ll = (a+b+c+d)/2`, `lh = (a-b+c-d)/2` (horizontal intensity changes),
/// `hl = (a+b-c-d)/2` (vertical changes), `hh = (a-b-c+d)/2` (diagonal).
pub fn haar_stack(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 || s.h == 0 || s.w == 0 {
        return Err(Error::shape(format!("haar transform requires even spatial dims, got {s}")));
    }
    let (bh, bw) = (s.h / 2, s.w / 2);
    let os = Shape::new(s.n, 4 * s.c, bh, bw);
    let mut out = vec![0.0; os.numel()];
    let d = input.data();
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = &d[s.plane(n, c)..s.plane(n, c) + s.h * s.w];
            for by in 0..bh {
                for bx in 0..bw {
                    let a = plane[(2 * by) * s.w + 2 * bx];
                    let b = plane[(2 * by) * s.w + 2 * bx + 1];
                    let cc = plane[(2 * by + 1) * s.w + 2 * bx];
                    let dd = plane[(2 * by + 1) * s.w + 2 * bx + 1];
                    let i = by * bw + bx;
                    out[os.plane(n, c) + i] = (a + b + cc + dd) * 0.5;
                    out[os.plane(n, s.c + c) + i] = (a - b + cc - dd) * 0.5;
                    out[os.plane(n, 2 * s.c + c) + i] = (a + b - cc - dd) * 0.5;
                    out[os.plane(n, 3 * s.c + c) + i] = (a - b - cc + dd) * 0.5;
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

/// Gradient of [`haar_stack`]: the transpose of the (orthonormal) analysis map.
pub fn haar_stack_backward(input_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let s = input_shape;
    let gs = grad_out.shape();
    let (bh, bw) = (gs.h, gs.w);
    let mut gi = vec![0.0; s.numel()];
    let gd = grad_out.data();
    for n in 0..s.n {
        for c in 0..s.c {
            let gi_plane = &mut gi[s.plane(n, c)..s.plane(n, c) + s.h * s.w];
            for by in 0..bh {
                for bx in 0..bw {
                    let i = by * bw + bx;
                    let gll = gd[gs.plane(n, c) + i];
                    let glh = gd[gs.plane(n, s.c + c) + i];
                    let ghl = gd[gs.plane(n, 2 * s.c + c) + i];
                    let ghh = gd[gs.plane(n, 3 * s.c + c) + i];
                    gi_plane[(2 * by) * s.w + 2 * bx] += (gll + glh + ghl + ghh) * 0.5;
                    gi_plane[(2 * by) * s.w + 2 * bx + 1] += (gll - glh + ghl - ghh) * 0.5;
                    gi_plane[(2 * by + 1) * s.w + 2 * bx] += (gll + glh - ghl - ghh) * 0.5;
                    gi_plane[(2 * by + 1) * s.w + 2 * bx + 1] += (gll - glh - ghl + ghh) * 0.5;
                }
            }
        }
    }
    Tensor::from_vec(s, gi)
}

/// Exact inverse of the stacked Haar transform.
pub fn haar_unstack(stacked: &Tensor) -> Result<Tensor> {
    let gs = stacked.shape();
    if gs.c % 4 != 0 {
        return Err(Error::shape(format!("stacked haar tensor needs 4k channels, got {gs}")));
    }
    let c = gs.c / 4;
    let s = Shape::new(gs.n, c, gs.h * 2, gs.w * 2);
    let (bh, bw) = (gs.h, gs.w);
    let mut out = vec![0.0; s.numel()];
    let d = stacked.data();
    for n in 0..gs.n {
        for ch in 0..c {
            let out_plane = &mut out[s.plane(n, ch)..s.plane(n, ch) + s.h * s.w];
            for by in 0..bh {
                for bx in 0..bw {
                    let i = by * bw + bx;
                    let ll = d[gs.plane(n, ch) + i];
                    let lh = d[gs.plane(n, c + ch) + i];
                    let hl = d[gs.plane(n, 2 * c + ch) + i];
                    let hh = d[gs.plane(n, 3 * c + ch) + i];
                    out_plane[(2 * by) * s.w + 2 * bx] = (ll + lh + hl + hh) * 0.5;
                    out_plane[(2 * by) * s.w + 2 * bx + 1] = (ll - lh + hl - hh) * 0.5;
                    out_plane[(2 * by + 1) * s.w + 2 * bx] = (ll + lh - hl - hh) * 0.5;
                    out_plane[(2 * by + 1) * s.w + 2 * bx + 1] = (ll - lh - hl + hh) * 0.5;
                }
            }
        }
    }
    Tensor::from_vec(s, out)
}

/// Extends the image by replicating the last row and/or column, used to make
/// odd spatial dims even before the Haar transform.
pub fn replicate_pad(input: &Tensor, pad_bottom: bool, pad_right: bool) -> Result<Tensor> {
    let s = input.shape();
    let os = Shape::new(s.n, s.c, s.h + pad_bottom as usize, s.w + pad_right as usize);
    let mut out = vec![0.0; os.numel()];
    let d = input.data();
    for n in 0..s.n {
        for c in 0..s.c {
            let src = &d[s.plane(n, c)..s.plane(n, c) + s.h * s.w];
            let dst = &mut out[os.plane(n, c)..os.plane(n, c) + os.h * os.w];
            for y in 0..os.h {
                let sy = y.min(s.h - 1);
                for x in 0..os.w {
                    let sx = x.min(s.w - 1);
                    dst[y * os.w + x] = src[sy * s.w + sx];
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

pub fn replicate_pad_backward(input_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let s = input_shape;
    let gs = grad_out.shape();
    let mut gi = vec![0.0; s.numel()];
    let gd = grad_out.data();
    for n in 0..s.n {
        for c in 0..s.c {
            let g_plane = &gd[gs.plane(n, c)..gs.plane(n, c) + gs.h * gs.w];
            let gi_plane = &mut gi[s.plane(n, c)..s.plane(n, c) + s.h * s.w];
            for y in 0..gs.h {
                let sy = y.min(s.h - 1);
                for x in 0..gs.w {
                    let sx = x.min(s.w - 1);
                    gi_plane[sy * s.w + sx] += g_plane[y * gs.w + x];
                }
            }
        }
    }
    Tensor::from_vec(s, gi)
}

/// Crops to the top-left `h x w` region.
pub fn crop(input: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = input.shape();
    if h > s.h || w > s.w {
        return Err(Error::shape(format!("crop {h}x{w} exceeds input {}x{}", s.h, s.w)));
    }
    let os = Shape::new(s.n, s.c, h, w);
    let mut out = vec![0.0; os.numel()];
    let d = input.data();
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..h {
                let src = s.plane(n, c) + y * s.w;
                let dst = os.plane(n, c) + y * w;
                out[dst..dst + w].copy_from_slice(&d[src..src + w]);
            }
        }
    }
    Tensor::from_vec(os, out)
}
