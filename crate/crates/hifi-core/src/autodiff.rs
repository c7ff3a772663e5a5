//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Var`] wraps a tensor plus (when gradients are wanted) the operation
//! that produced it. Running ops on untracked vars records nothing, so
//! inference frees intermediates as soon as handles drop; running them on
//! tracked vars builds the operation graph that [`GradTape::backward`]
//! replays in reverse.
//!
//! The graph behind one loss value is the "tape": single-writer, built by
//! one thread within one training step. Kernels themselves may use data
//! parallelism internally; results are bit-identical either way.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{kernels, Activation, Shape, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// A node in the differentiation graph.
#[derive(Clone)]
pub struct Var {
    node: Rc<Node>,
}

struct Node {
    id: u64,
    value: Tensor,
    tracked: bool,
    op: Option<Op>,
}

enum Op {
    Conv2d { input: Var, weight: Var, bias: Var, pad: usize, act: Activation },
    MaxPool { input: Var },
    AvgPool { input: Var },
    Relu { input: Var },
    Sigmoid { input: Var },
    Exp { input: Var },
    Sqrt { input: Var },
    Abs { input: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Scale { input: Var, k: f64 },
    AddScalar { input: Var },
    Concat { a: Var, b: Var },
    Slice { input: Var, start: usize },
    Upsample { input: Var },
    Subsample { input: Var },
    Reshape { input: Var },
    HaarStack { input: Var },
    ReplicatePad { input: Var },
    MeanAll { input: Var },
    SumAll { input: Var },
}

impl Var {
    /// Leaf var; tracked iff the tensor has `requires_grad` set.
    pub fn leaf(value: Tensor) -> Var {
        let tracked = value.requires_grad();
        Var::raw(value, tracked, None)
    }

    /// Leaf var that never tracks gradients.
    pub fn constant(value: Tensor) -> Var {
        Var::raw(value, false, None)
    }

    /// Tracked leaf var (a trainable parameter or a gradient-check input).
    pub fn param(value: Tensor) -> Var {
        Var::raw(value.with_requires_grad(true), true, None)
    }

    fn raw(value: Tensor, tracked: bool, op: Option<Op>) -> Var {
        Var {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                value,
                tracked,
                op,
            }),
        }
    }

    fn result(value: Tensor, op: Op) -> Var {
        let tracked = op.parents().iter().any(|p| p.node.tracked);
        // Untracked results do not retain their parents; intermediates in
        // inference paths are freed as soon as the handle drops.
        let op = if tracked { Some(op) } else { None };
        Var::raw(value.with_requires_grad(tracked), tracked, op)
    }

    pub fn value(&self) -> &Tensor {
        &self.node.value
    }

    pub fn shape(&self) -> Shape {
        self.node.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.tracked
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn scalar_value(&self) -> Result<f64> {
        self.node.value.scalar_value()
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(id={}, {:?}, tracked={})", self.node.id, self.node.value, self.node.tracked)
    }
}

impl Op {
    fn parents(&self) -> Vec<&Var> {
        match self {
            Op::Conv2d { input, weight, bias, .. } => vec![input, weight, bias],
            Op::MaxPool { input }
            | Op::AvgPool { input }
            | Op::Relu { input }
            | Op::Sigmoid { input }
            | Op::Exp { input }
            | Op::Sqrt { input }
            | Op::Abs { input }
            | Op::Scale { input, .. }
            | Op::AddScalar { input }
            | Op::Slice { input, .. }
            | Op::Upsample { input }
            | Op::Subsample { input }
            | Op::Reshape { input }
            | Op::HaarStack { input }
            | Op::ReplicatePad { input }
            | Op::MeanAll { input }
            | Op::SumAll { input } => vec![input],
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::Div { a, b } | Op::Concat { a, b } => {
                vec![a, b]
            }
        }
    }
}

// ── Operations ──────────────────────────────────────────────────────────

/// Convolution with zero "same" padding `(k-1)/2`, stride 1.
pub fn conv2d(input: &Var, weight: &Var, bias: &Var, act: Activation) -> Result<Var> {
    let pad = (weight.shape().h.max(1) - 1) / 2;
    conv2d_padded(input, weight, bias, pad, act)
}

/// Convolution with an explicit padding (0 gives a "valid" convolution).
pub fn conv2d_padded(input: &Var, weight: &Var, bias: &Var, pad: usize, act: Activation) -> Result<Var> {
    let value = kernels::conv2d(input.value(), weight.value(), bias.value(), pad, act)?;
    Ok(Var::result(
        value,
        Op::Conv2d { input: input.clone(), weight: weight.clone(), bias: bias.clone(), pad, act },
    ))
}

pub fn maxpool2d(input: &Var) -> Result<Var> {
    let value = kernels::maxpool2d(input.value())?;
    Ok(Var::result(value, Op::MaxPool { input: input.clone() }))
}

pub fn avgpool2d(input: &Var) -> Result<Var> {
    let value = kernels::avgpool2d(input.value())?;
    Ok(Var::result(value, Op::AvgPool { input: input.clone() }))
}

pub fn relu(input: &Var) -> Var {
    Var::result(kernels::relu(input.value()), Op::Relu { input: input.clone() })
}

pub fn sigmoid(input: &Var) -> Var {
    Var::result(kernels::sigmoid(input.value()), Op::Sigmoid { input: input.clone() })
}

pub fn exp(input: &Var) -> Var {
    Var::result(input.value().map(f64::exp), Op::Exp { input: input.clone() })
}

pub fn sqrt(input: &Var) -> Var {
    Var::result(input.value().map(f64::sqrt), Op::Sqrt { input: input.clone() })
}

pub fn abs(input: &Var) -> Var {
    Var::result(input.value().map(f64::abs), Op::Abs { input: input.clone() })
}

/// Elementwise sum; `b` may be one-channel (copied across `a`'s channels).
pub fn add(a: &Var, b: &Var) -> Result<Var> {
    let value = kernels::binary_broadcast(a.value(), b.value(), |x, y| x + y)?;
    Ok(Var::result(value, Op::Add { a: a.clone(), b: b.clone() }))
}

/// Elementwise difference (equal shapes only).
pub fn sub(a: &Var, b: &Var) -> Result<Var> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("sub requires equal shapes, got {} and {}", a.shape(), b.shape())));
    }
    let value = kernels::zip_map(a.value(), b.value(), |x, y| x - y);
    Ok(Var::result(value, Op::Sub { a: a.clone(), b: b.clone() }))
}

/// Elementwise product; `b` may be one-channel (copied across `a`'s channels).
pub fn mul(a: &Var, b: &Var) -> Result<Var> {
    let value = kernels::binary_broadcast(a.value(), b.value(), |x, y| x * y)?;
    Ok(Var::result(value, Op::Mul { a: a.clone(), b: b.clone() }))
}

/// Elementwise quotient (equal shapes only).
pub fn div(a: &Var, b: &Var) -> Result<Var> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("div requires equal shapes, got {} and {}", a.shape(), b.shape())));
    }
    let value = kernels::zip_map(a.value(), b.value(), |x, y| x / y);
    Ok(Var::result(value, Op::Div { a: a.clone(), b: b.clone() }))
}

pub fn scale(input: &Var, k: f64) -> Var {
    Var::result(input.value().map(|v| v * k), Op::Scale { input: input.clone(), k })
}

pub fn add_scalar(input: &Var, k: f64) -> Var {
    Var::result(input.value().map(|v| v + k), Op::AddScalar { input: input.clone() })
}

pub fn concat_channels(a: &Var, b: &Var) -> Result<Var> {
    let value = kernels::concat_channels(a.value(), b.value())?;
    Ok(Var::result(value, Op::Concat { a: a.clone(), b: b.clone() }))
}

pub fn slice_channels(input: &Var, start: usize, count: usize) -> Result<Var> {
    let value = kernels::slice_channels(input.value(), start, count)?;
    Ok(Var::result(value, Op::Slice { input: input.clone(), start }))
}

pub fn upsample_nearest(input: &Var, target_h: usize, target_w: usize) -> Result<Var> {
    let value = kernels::upsample_nearest(input.value(), target_h, target_w)?;
    Ok(Var::result(value, Op::Upsample { input: input.clone() }))
}

pub fn subsample2(input: &Var) -> Result<Var> {
    let value = kernels::subsample2(input.value())?;
    Ok(Var::result(value, Op::Subsample { input: input.clone() }))
}

pub fn reshape(input: &Var, shape: Shape) -> Result<Var> {
    let value = input.value().reshaped(shape)?;
    Ok(Var::result(value, Op::Reshape { input: input.clone() }))
}

/// One-level Haar transform, four bands stacked along channels.
pub fn haar_stack(input: &Var) -> Result<Var> {
    let value = kernels::haar_stack(input.value())?;
    Ok(Var::result(value, Op::HaarStack { input: input.clone() }))
}

pub fn replicate_pad(input: &Var, pad_bottom: bool, pad_right: bool) -> Result<Var> {
    let value = kernels::replicate_pad(input.value(), pad_bottom, pad_right)?;
    Ok(Var::result(value, Op::ReplicatePad { input: input.clone() }))
}

/// Mean over all elements, as a 1x1x1x1 var.
pub fn mean_all(input: &Var) -> Var {
    let value = Tensor::scalar(kernels::mean_all(input.value()));
    Var::result(value, Op::MeanAll { input: input.clone() })
}

/// Sum over all elements, as a 1x1x1x1 var.
pub fn sum_all(input: &Var) -> Var {
    let value = Tensor::scalar(kernels::sum_all(input.value()));
    Var::result(value, Op::SumAll { input: input.clone() })
}

// ── Backward pass ───────────────────────────────────────────────────────

/// Gradients of one scalar loss with respect to every tracked leaf,
/// computed by replaying the recorded operation graph in reverse.
pub struct GradTape {
    grads: HashMap<u64, Tensor>,
}

impl GradTape {
    /// Runs reverse-mode accumulation from a scalar loss.
    pub fn backward(loss: &Var) -> Result<GradTape> {
        if loss.value().numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {}",
                loss.shape()
            )));
        }

        // Post-order DFS over tracked nodes: leaves first, loss last.
        let mut order: Vec<Rc<Node>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Rc<Node>, bool)> = vec![(loss.node.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(op) = &node.op {
                for parent in op.parents() {
                    if parent.node.tracked && !visited.contains(&parent.node.id) {
                        stack.push((parent.node.clone(), false));
                    }
                }
            }
        }

        let mut grads: HashMap<u64, Tensor> = HashMap::new();
        grads.insert(loss.node.id, Tensor::scalar(1.0));
        for node in order.iter().rev() {
            let Some(grad) = grads.get(&node.id).cloned() else { continue };
            if let Some(op) = &node.op {
                op.backward(&node.value, &grad, &mut grads)?;
            }
        }
        Ok(GradTape { grads })
    }

    /// Gradient of the loss with respect to a leaf, if the leaf was reached.
    pub fn grad(&self, var: &Var) -> Option<&Tensor> {
        self.grads.get(&var.node.id)
    }

    /// Gradient of the loss with respect to a leaf; zero when the loss does
    /// not depend on it.
    pub fn grad_or_zeros(&self, var: &Var) -> Tensor {
        self.grad(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

fn accumulate(grads: &mut HashMap<u64, Tensor>, target: &Var, grad: Tensor) {
    if !target.node.tracked {
        return;
    }
    match grads.remove(&target.node.id) {
        Some(existing) => {
            let summed = kernels::zip_map(&existing, &grad, |a, b| a + b);
            grads.insert(target.node.id, summed);
        }
        None => {
            grads.insert(target.node.id, grad);
        }
    }
}

impl Op {
    fn backward(&self, output: &Tensor, grad: &Tensor, grads: &mut HashMap<u64, Tensor>) -> Result<()> {
        match self {
            Op::Conv2d { input, weight, bias, pad, act } => {
                let grad_pre = match act {
                    Activation::Relu => kernels::relu_backward(output, grad),
                    Activation::None => grad.clone(),
                };
                let (gi, gw, gb) = kernels::conv2d_backward(
                    input.value(),
                    weight.value(),
                    *pad,
                    &grad_pre,
                    input.node.tracked,
                    weight.node.tracked,
                )?;
                if let Some(gi) = gi {
                    accumulate(grads, input, gi);
                }
                if let Some(gw) = gw {
                    accumulate(grads, weight, gw);
                }
                if let Some(gb) = gb {
                    accumulate(grads, bias, gb);
                }
            }
            Op::MaxPool { input } => {
                accumulate(grads, input, kernels::maxpool2d_backward(input.value(), grad)?);
            }
            Op::AvgPool { input } => {
                accumulate(grads, input, kernels::avgpool2d_backward(input.shape(), grad)?);
            }
            Op::Relu { input } => {
                accumulate(grads, input, kernels::relu_backward(output, grad));
            }
            Op::Sigmoid { input } => {
                accumulate(grads, input, kernels::sigmoid_backward(output, grad));
            }
            Op::Exp { input } => {
                accumulate(grads, input, kernels::zip_map(output, grad, |o, g| g * o));
            }
            Op::Sqrt { input } => {
                accumulate(grads, input, kernels::zip_map(output, grad, |o, g| g * 0.5 / o));
            }
            Op::Abs { input } => {
                let gi = kernels::zip_map(input.value(), grad, |x, g| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
                accumulate(grads, input, gi);
            }
            Op::Add { a, b } => {
                accumulate(grads, a, grad.clone());
                let gb = if b.shape() == a.shape() {
                    grad.clone()
                } else {
                    kernels::collapse_to_one_channel(grad, b.shape())?
                };
                accumulate(grads, b, gb);
            }
            Op::Sub { a, b } => {
                accumulate(grads, a, grad.clone());
                accumulate(grads, b, grad.map(|g| -g));
            }
            Op::Mul { a, b } => {
                let ga = kernels::binary_broadcast(grad, b.value(), |g, y| g * y)?;
                accumulate(grads, a, ga);
                let gb_full = kernels::zip_map(grad, a.value(), |g, x| g * x);
                let gb = if b.shape() == a.shape() {
                    gb_full
                } else {
                    kernels::collapse_to_one_channel(&gb_full, b.shape())?
                };
                accumulate(grads, b, gb);
            }
            Op::Div { a, b } => {
                let ga = kernels::zip_map(grad, b.value(), |g, y| g / y);
                accumulate(grads, a, ga);
                let gb = {
                    let t = kernels::zip_map(grad, a.value(), |g, x| g * x);
                    kernels::zip_map(&t, b.value(), |gx, y| -gx / (y * y))
                };
                accumulate(grads, b, gb);
            }
            Op::Scale { input, k } => {
                accumulate(grads, input, grad.map(|g| g * k));
            }
            Op::AddScalar { input } => {
                accumulate(grads, input, grad.clone());
            }
            Op::Concat { a, b } => {
                let ga = kernels::slice_channels(grad, 0, a.shape().c)?;
                let gb = kernels::slice_channels(grad, a.shape().c, b.shape().c)?;
                accumulate(grads, a, ga);
                accumulate(grads, b, gb);
            }
            Op::Slice { input, start } => {
                accumulate(grads, input, kernels::slice_channels_backward(grad, input.shape(), *start)?);
            }
            Op::Upsample { input } => {
                accumulate(grads, input, kernels::upsample_nearest_backward(input.shape(), grad)?);
            }
            Op::Subsample { input } => {
                accumulate(grads, input, kernels::subsample2_backward(input.shape(), grad)?);
            }
            Op::Reshape { input } => {
                accumulate(grads, input, grad.reshaped(input.shape())?);
            }
            Op::HaarStack { input } => {
                accumulate(grads, input, kernels::haar_stack_backward(input.shape(), grad)?);
            }
            Op::ReplicatePad { input } => {
                accumulate(grads, input, kernels::replicate_pad_backward(input.shape(), grad)?);
            }
            Op::MeanAll { input } => {
                let g = grad.scalar_value()?;
                accumulate(grads, input, Tensor::full(input.shape(), g / input.value().numel() as f64));
            }
            Op::SumAll { input } => {
                let g = grad.scalar_value()?;
                accumulate(grads, input, Tensor::full(input.shape(), g));
            }
        }
        Ok(())
    }
}
