//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value
//! and the identities of its inputs. [`Graph::backward`] walks the tape in
//! reverse, accumulating gradients only into subtrees that contain at least
//! one parameter. Graphs are built per step and discarded afterwards.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::Element;
use crate::ops;
use crate::ops::Padding;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv2d { x: Var, kernel: Var, bias: Option<Var>, padding: Padding },
    TransposeConv2d { x: Var, kernel: Var },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Relu { x: Var },
    Sigmoid { x: Var },
    SoftmaxChannels { x: Var },
    ConcatChannels { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulGate { x: Var, gate: Var },
    Div { a: Var, b: Var },
    Affine { x: Var, mul: f64 },
    LnEps { x: Var, eps: f64 },
    SumAll { x: Var },
    MeanAll { x: Var },
    ChannelSums { x: Var },
}

struct Node<E: Element> {
    value: Tensor<E>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<E: Element> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    /// Gradient of the loss w.r.t. `var`, if it was reached by backprop.
    pub fn get(&self, var: Var) -> Option<&Tensor<E>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Removes and returns the gradient for `var`.
    pub fn take(&mut self, var: Var) -> Option<Tensor<E>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

/// Recording tape for one forward/backward pass.
pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Leaf that does not receive a gradient (images, targets, constants).
    pub fn input(&mut self, value: Tensor<E>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that accumulates a gradient (trainable weights and biases).
    pub fn param(&mut self, value: Tensor<E>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Forward value of a node.
    pub fn value(&self, var: Var) -> &Tensor<E> {
        &self.nodes[var.0].value
    }

    /// Forward value of a single-element node.
    pub fn scalar(&self, var: Var) -> Result<E> {
        self.nodes[var.0].value.item()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operation name of the node at tape position `index`.
    pub fn op_name_at(&self, index: usize) -> &'static str {
        match self.nodes[index].op {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::TransposeConv2d { .. } => "transpose_conv2d",
            Op::MaxPool2 { .. } => "maxpool2d",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::SoftmaxChannels { .. } => "softmax_channels",
            Op::ConcatChannels { .. } => "concat_channels",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul_elementwise",
            Op::MulGate { .. } => "mul_gate",
            Op::Div { .. } => "div_elementwise",
            Op::Affine { .. } => "affine",
            Op::LnEps { .. } => "ln_eps",
            Op::SumAll { .. } => "sum_all",
            Op::MeanAll { .. } => "mean_all",
            Op::ChannelSums { .. } => "channel_sums",
        }
    }

    fn push(&mut self, value: Tensor<E>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        padding: Padding,
    ) -> Result<Var> {
        let value = ops::conv2d_forward(
            self.value(x),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            padding,
        )?;
        let needs = self.needs(x)
            || self.needs(kernel)
            || bias.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(value, Op::Conv2d { x, kernel, bias, padding }, needs))
    }

    pub fn transpose_conv2d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let value = ops::tconv2_forward(self.value(x), self.value(kernel))?;
        let needs = self.needs(x) || self.needs(kernel);
        Ok(self.push(value, Op::TransposeConv2d { x, kernel }, needs))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (value, argmax) = ops::maxpool2_forward(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.maximum(E::ZERO));
        let needs = self.needs(x);
        self.push(value, Op::Relu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| E::ONE / (E::ONE + (-v).exp()));
        let needs = self.needs(x);
        self.push(value, Op::Sigmoid { x }, needs)
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let value = ops::softmax_channels_forward(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::SoftmaxChannels { x }, needs))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::concat_channels_forward(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatChannels { a, b }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul_elementwise", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div_elementwise", a, b, |x, y| x / y, |a, b| Op::Div { a, b })
    }

    fn zip(
        &mut self,
        opname: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(E, E) -> E,
        op: impl Fn(Var, Var) -> Op,
    ) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                opname,
                format!(
                    "operand shapes differ: {:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let data: Vec<E> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op(a, b), needs))
    }

    /// Hadamard product with a `[n,1,h,w]` gate broadcast over channels.
    pub fn mul_gate(&mut self, x: Var, gate: Var) -> Result<Var> {
        let value = ops::mul_gate_forward(self.value(x), self.value(gate))?;
        let needs = self.needs(x) || self.needs(gate);
        Ok(self.push(value, Op::MulGate { x, gate }, needs))
    }

    /// Elementwise `mul * x + add` with compile-time constants.
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Var {
        let m = E::from_f64(mul);
        let a = E::from_f64(add);
        let value = self.value(x).map(|v| m * v + a);
        let needs = self.needs(x);
        self.push(value, Op::Affine { x, mul }, needs)
    }

    /// Elementwise `ln(x + eps)`.
    pub fn ln_eps(&mut self, x: Var, eps: f64) -> Var {
        let e = E::from_f64(eps);
        let value = self.value(x).map(|v| (v + e).ln());
        let needs = self.needs(x);
        self.push(value, Op::LnEps { x, eps }, needs)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut acc = E::ZERO;
        for &v in self.value(x).data() {
            acc += v;
        }
        let needs = self.needs(x);
        self.push(Tensor::scalar(acc), Op::SumAll { x }, needs)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let mut acc = E::ZERO;
        for &v in self.value(x).data() {
            acc += v;
        }
        let mean = acc / E::from_f64(n as f64);
        let needs = self.needs(x);
        self.push(Tensor::scalar(mean), Op::MeanAll { x }, needs)
    }

    /// Per-channel sums over batch and space: `[n,c,h,w] -> [c]`.
    pub fn channel_sums(&mut self, x: Var) -> Result<Var> {
        let value = ops::channel_sums_forward(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::ChannelSums { x }, needs))
    }

    /// Backpropagates from a scalar `loss` node, returning one gradient per
    /// reachable parameter subtree.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!(
                    "loss must be a scalar, got shape {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(E::ONE));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Tensor<E>, grads: &mut [Option<Tensor<E>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, kernel, bias, padding } => {
                if self.needs(*x) {
                    let gx = ops::conv2d_grad_input(
                        self.value(*kernel),
                        g,
                        self.value(*x).shape(),
                        *padding,
                    );
                    accumulate(grads, *x, gx);
                }
                if self.needs(*kernel) {
                    let gk = ops::conv2d_grad_kernel(
                        self.value(*x),
                        g,
                        self.value(*kernel).shape(),
                        *padding,
                    );
                    accumulate(grads, *kernel, gk);
                }
                if let Some(b) = bias {
                    if self.needs(*b) {
                        accumulate(grads, *b, ops::conv2d_grad_bias(g));
                    }
                }
            }
            Op::TransposeConv2d { x, kernel } => {
                if self.needs(*x) {
                    let gx =
                        ops::tconv2_grad_input(self.value(*kernel), g, self.value(*x).shape());
                    accumulate(grads, *x, gx);
                }
                if self.needs(*kernel) {
                    let gk =
                        ops::tconv2_grad_kernel(self.value(*x), g, self.value(*kernel).shape());
                    accumulate(grads, *kernel, gk);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let gx = ops::maxpool2_backward(g, argmax, self.value(*x).shape());
                accumulate(grads, *x, gx);
            }
            Op::Relu { x } => {
                let data: Vec<E> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > E::ZERO { gv } else { E::ZERO })
                    .collect();
                accumulate(grads, *x, Tensor::new(g.shape(), data).expect("shape matches"));
            }
            Op::Sigmoid { x } => {
                let data: Vec<E> = node
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&y, &gv)| gv * y * (E::ONE - y))
                    .collect();
                accumulate(grads, *x, Tensor::new(g.shape(), data).expect("shape matches"));
            }
            Op::SoftmaxChannels { x } => {
                accumulate(grads, *x, ops::softmax_channels_backward(&node.value, g));
            }
            Op::ConcatChannels { a, b } => {
                let ca = self.value(*a).shape()[1];
                let cb = self.value(*b).shape()[1];
                let (ga, gb) = ops::concat_channels_backward(g, ca, cb);
                if self.needs(*a) {
                    accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    accumulate(grads, *b, gb);
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    accumulate(grads, *a, zip_map(g, self.value(*b), |gv, bv| gv * bv));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, zip_map(g, self.value(*a), |gv, av| gv * av));
                }
            }
            Op::MulGate { x, gate } => {
                let (gx, ggate) = ops::mul_gate_backward(self.value(*x), self.value(*gate), g);
                if self.needs(*x) {
                    accumulate(grads, *x, gx);
                }
                if self.needs(*gate) {
                    accumulate(grads, *gate, ggate);
                }
            }
            Op::Div { a, b } => {
                if self.needs(*a) {
                    accumulate(grads, *a, zip_map(g, self.value(*b), |gv, bv| gv / bv));
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let data: Vec<E> = g
                        .data()
                        .iter()
                        .zip(av.data().iter().zip(bv.data()))
                        .map(|(&gv, (&a_, &b_))| -gv * a_ / (b_ * b_))
                        .collect();
                    accumulate(grads, *b, Tensor::new(g.shape(), data).expect("shape matches"));
                }
            }
            Op::Affine { x, mul } => {
                let m = E::from_f64(*mul);
                accumulate(grads, *x, g.map(|gv| gv * m));
            }
            Op::LnEps { x, eps } => {
                let e = E::from_f64(*eps);
                accumulate(grads, *x, zip_map(g, self.value(*x), |gv, xv| gv / (xv + e)));
            }
            Op::SumAll { x } => {
                let gv = g.data()[0];
                accumulate(grads, *x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::MeanAll { x } => {
                let n = self.value(*x).numel();
                let gv = g.data()[0] / E::from_f64(n as f64);
                accumulate(grads, *x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::ChannelSums { x } => {
                let gx = ops::channel_sums_backward(g, self.value(*x).shape());
                accumulate(grads, *x, gx);
            }
        }
    }
}

fn zip_map<E: Element>(a: &Tensor<E>, b: &Tensor<E>, f: impl Fn(E, E) -> E) -> Tensor<E> {
    let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape matches")
}

fn accumulate<E: Element>(grads: &mut [Option<Tensor<E>>], var: Var, g: Tensor<E>) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (dst, src) in existing.data_mut().iter_mut().zip(g.data()) {
                *dst += *src;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
