//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Parameters are borrowed from a [`ParamStore`]; [`Graph::backward`] returns
//! an owned [`Gradients`] value so the store can be updated once the graph is
//! dropped. Gradients are additive: the caller zeroes the store between steps.

use std::borrow::Cow;
use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use super::kernels::{self, ConvGeometry};
use super::params::{ActivationMode, LayerParams, ParamId, ParamStore};
use super::tensor::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        input: usize,
        argmax: Vec<u32>,
    },
    Resize {
        input: usize,
    },
    Activation {
        input: usize,
        mode: ActivationMode,
    },
    Concat {
        parts: Vec<usize>,
    },
    Slice {
        input: usize,
        start: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    MulChannel {
        x: usize,
        gate: usize,
    },
    Scale {
        input: usize,
        factor: f64,
    },
    Sum {
        input: usize,
    },
    Mean {
        input: usize,
    },
    Mse {
        pred: usize,
        target: usize,
    },
    Bce {
        prob: usize,
        target: usize,
        eps: f64,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::MaxPool { input, .. }
            | Op::Resize { input }
            | Op::Activation { input, .. }
            | Op::Slice { input, .. }
            | Op::Scale { input, .. }
            | Op::Sum { input }
            | Op::Mean { input } => vec![*input],
            Op::Concat { parts } => parts.clone(),
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::MulChannel { x, gate } => vec![*x, *gate],
            Op::Mse { pred, target } => vec![*pred, *target],
            Op::Bce { prob, target, .. } => vec![*prob, *target],
        }
    }
}

struct Node<'p, T: Element> {
    value: Cow<'p, Tensor<T>>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T: Element = f32> {
    leaves: HashMap<usize, Vec<T>>,
    params: Vec<(ParamId, Vec<T>)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a leaf created with [`Graph::input`] or [`Graph::param`].
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.leaves.get(&var.0).map(Vec::as_slice)
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn all_finite(&self) -> bool {
        self.leaves
            .values()
            .chain(self.params.iter().map(|(_, g)| g))
            .all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Recorded forward computation.
pub struct Graph<'p, T: Element = f32> {
    nodes: Vec<Node<'p, T>>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
    shapes_only: bool,
    kinks: Option<DefaultHasher>,
}

impl<'p, T: Element> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'p, T: Element> Graph<'p, T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grad_enabled: true,
            shapes_only: false,
            kinks: None,
        }
    }

    /// A graph that records values only; nothing requires gradients.
    pub fn inference() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Inference graph whose convolutions skip the arithmetic and emit zeros.
    /// Shapes are exact, values are not; for walking large layouts cheaply.
    pub fn shape_probe() -> Self {
        Graph {
            shapes_only: true,
            ..Self::inference()
        }
    }

    /// Records which side of every ReLU kink and which max-pool winner the
    /// forward pass took; see [`Graph::kink_signature`].
    pub fn with_kink_tracking(mut self) -> Self {
        self.kinks = Some(DefaultHasher::new());
        self
    }

    /// Hash of the piecewise-linear branches taken so far. Two evaluations
    /// with equal signatures lie on the same smooth piece (up to collisions).
    pub fn kink_signature(&self) -> Option<u64> {
        self.kinks.as_ref().map(|h| h.finish())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        let requires_grad = self.grad_enabled && op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<&Tensor<T>> {
        self.nodes
            .get(var.0)
            .map(|n| n.value.as_ref())
            .ok_or_else(|| Error::Internal(format!("variable {var:?} not in this graph")))
    }

    /// Adds a leaf tensor. It receives a gradient iff `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = self.grad_enabled && tensor.requires_grad();
        self.nodes.push(Node {
            value: Cow::Owned(tensor),
            op: Op::Leaf,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrows a parameter; repeated calls with the same id return the same node.
    pub fn param(&mut self, store: &'p ParamStore<T>, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let tensor = store.get(id);
        self.nodes.push(Node {
            value: Cow::Borrowed(tensor),
            op: Op::Leaf,
            requires_grad: self.grad_enabled && tensor.requires_grad(),
            param: Some(id),
        });
        let var = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, var);
        var
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        self.nodes[var.0].value.as_ref()
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.value(var).shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let x = self.check(input)?;
        let w = self.check(weight)?;
        let g = ConvGeometry::new(x.shape(), w.shape(), stride, padding)?;
        if !w.all_finite() {
            return Err(Error::Numeric("convolution weights contain NaN/Inf".into()));
        }
        let b = match bias {
            Some(b) => {
                let bt = self.check(b)?;
                if bt.shape().numel() != g.cout {
                    return Err(Error::dim(format!(
                        "bias of {} values for {} output channels",
                        bt.shape().numel(),
                        g.cout
                    )));
                }
                Some(bt.data())
            }
            None => None,
        };
        let batch = x.shape().batch;
        let shape = Shape::new(batch, g.cout, g.out_height, g.out_width);
        let out = if self.shapes_only {
            vec![T::zero(); shape.numel()]
        } else {
            kernels::conv2d_forward(x.data(), batch, w.data(), b, &g)
        };
        let t = Tensor::from_vec(shape, out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.map(|b| b.0),
                stride,
                padding,
            },
        ))
    }

    /// Convolution with a layer's stored weight and bias, followed by its activation.
    pub fn layer(&mut self, store: &'p ParamStore<T>, layer: &LayerParams, input: Var, padding: usize) -> Result<Var> {
        let weight = layer.weight.ok_or_else(|| Error::Usage("layer has no weights".into()))?;
        let w = self.param(store, weight);
        let b = layer.bias.map(|b| self.param(store, b));
        let y = self.conv2d(input, w, b, 1, padding)?;
        Ok(match layer.activation {
            ActivationMode::None => y,
            mode => self.activation(y, mode),
        })
    }

    pub fn max_pool2x2(&mut self, input: Var) -> Result<Var> {
        let x = self.check(input)?;
        let s = x.shape();
        let (out, argmax) = kernels::maxpool2x2_forward(x.data(), s)?;
        if let Some(h) = &mut self.kinks {
            argmax.hash(h);
        }
        let t = Tensor::from_vec(Shape::new(s.batch, s.channels, s.height / 2, s.width / 2), out)?;
        Ok(self.push(t, Op::MaxPool { input: input.0, argmax }))
    }

    /// Bilinear resize with the align-corners-false convention.
    pub fn resize_bilinear(&mut self, input: Var, height: usize, width: usize) -> Result<Var> {
        let x = self.check(input)?;
        let s = x.shape();
        if height == 0 || width == 0 {
            return Err(Error::dim("resize target must be non-empty"));
        }
        if (height, width) == (s.height, s.width) {
            return Ok(input);
        }
        let out = kernels::resize_forward(x.data(), s, height, width);
        let t = Tensor::from_vec(Shape::new(s.batch, s.channels, height, width), out)?;
        Ok(self.push(t, Op::Resize { input: input.0 }))
    }

    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let s = self.check(input)?.shape();
        self.resize_bilinear(input, 2 * s.height, 2 * s.width)
    }

    pub fn activation(&mut self, input: Var, mode: ActivationMode) -> Var {
        let x = self.nodes[input.0].value.as_ref();
        let one = T::one();
        // Keep saturated outputs strictly inside the open ranges.
        let below_one = one - T::epsilon() / T::from_f64(2.0);
        let data: Vec<T> = match mode {
            ActivationMode::Relu => x.data().iter().map(|&v| v.max(T::zero())).collect(),
            ActivationMode::Sigmoid => x
                .data()
                .iter()
                .map(|&v| sigmoid(v).max(T::min_positive_value()).min(below_one))
                .collect(),
            ActivationMode::Tanh => x.data().iter().map(|&v| v.tanh().max(-below_one).min(below_one)).collect(),
            ActivationMode::None => return input,
        };
        if let (Some(h), ActivationMode::Relu) = (&mut self.kinks, mode) {
            for chunk in x.data().chunks(64) {
                chunk.iter().fold(0u64, |m, &v| m << 1 | (v > T::zero()) as u64).hash(h);
            }
        }
        let t = Tensor::from_vec(x.shape(), data).expect("same shape");
        self.push(t, Op::Activation { input: input.0, mode })
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, ActivationMode::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, ActivationMode::Sigmoid)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.activation(input, ActivationMode::Tanh)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        if parts.len() == 1 {
            return Ok(first);
        }
        let s0 = self.check(first)?.shape();
        let mut channels = 0;
        for &p in parts {
            let s = self.check(p)?.shape();
            if (s.batch, s.height, s.width) != (s0.batch, s0.height, s0.width) {
                return Err(Error::dim(format!("cannot concat {s} with {s0}")));
            }
            channels += s.channels;
        }
        let plane = s0.plane();
        let mut data = Vec::with_capacity(s0.batch * channels * plane);
        for b in 0..s0.batch {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape().channels;
                data.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let t = Tensor::from_vec(Shape::new(s0.batch, channels, s0.height, s0.width), data)?;
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
            },
        ))
    }

    /// Channels `start..start + len` of `input`.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.check(input)?.shape();
        if len == 0 || start + len > s.channels {
            return Err(Error::dim(format!("channel slice {start}..{} out of range for {s}", start + len)));
        }
        if start == 0 && len == s.channels {
            return Ok(input);
        }
        let plane = s.plane();
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(s.batch * len * plane);
        for b in 0..s.batch {
            let base = (b * s.channels + start) * plane;
            data.extend_from_slice(&x[base..base + len * plane]);
        }
        let t = Tensor::from_vec(Shape::new(s.batch, len, s.height, s.width), data)?;
        Ok(self.push(t, Op::Slice { input: input.0, start }))
    }

    pub fn split_channels(&mut self, input: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let s = self.check(input)?.shape();
        if sizes.iter().sum::<usize>() != s.channels || sizes.contains(&0) {
            return Err(Error::dim(format!(
                "split sizes {sizes:?} do not partition {} channels",
                s.channels
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.slice_channels(input, start, len)?);
            start += len;
        }
        Ok(out)
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<Shape> {
        let sa = self.check(a)?.shape();
        let sb = self.check(b)?.shape();
        if sa != sb {
            return Err(Error::dim(format!("{what}: shapes {sa} and {sb} differ")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.binary_same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        Ok(self.push(Tensor::from_vec(s, data)?, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.binary_same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        Ok(self.push(Tensor::from_vec(s, data)?, Op::Mul { a: a.0, b: b.0 }))
    }

    /// `x * gate` where `gate` has one channel broadcast over all of `x`'s channels.
    pub fn mul_channel(&mut self, x: Var, gate: Var) -> Result<Var> {
        let sx = self.check(x)?.shape();
        let sg = self.check(gate)?.shape();
        if sg != Shape::new(sx.batch, 1, sx.height, sx.width) {
            return Err(Error::dim(format!("gate {sg} cannot broadcast over {sx}")));
        }
        let plane = sx.plane();
        let xv = self.value(x).data();
        let gv = self.value(gate).data();
        let mut data = Vec::with_capacity(sx.numel());
        for b in 0..sx.batch {
            let g = &gv[b * plane..(b + 1) * plane];
            for c in 0..sx.channels {
                let base = (b * sx.channels + c) * plane;
                data.extend(xv[base..base + plane].iter().zip(g).map(|(a, b)| *a * *b));
            }
        }
        Ok(self.push(Tensor::from_vec(sx, data)?, Op::MulChannel { x: x.0, gate: gate.0 }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let x = self.value(input);
        let f = T::from_f64(factor);
        let t = Tensor::from_vec(x.shape(), x.data().iter().map(|v| *v * f).collect()).expect("same shape");
        self.push(t, Op::Scale { input: input.0, factor })
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: T = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { input: input.0 })
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let n = T::from_f64(x.shape().numel() as f64);
        let s: T = x.data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean { input: input.0 })
    }

    /// Mean squared error over every element.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let s = self.binary_same_shape(pred, target, "mse")?;
        let n = s.numel() as f64;
        let total: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| {
                let d = (*p - *t).as_f64();
                d * d
            })
            .sum();
        Ok(self.push(
            Tensor::scalar(T::from_f64(total / n)),
            Op::Mse {
                pred: pred.0,
                target: target.0,
            },
        ))
    }

    /// Mean binary cross-entropy of probabilities clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, prob: Var, target: Var, eps: f64) -> Result<Var> {
        let s = self.binary_same_shape(prob, target, "bce")?;
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::Usage(format!("bce epsilon {eps} outside (0, 0.5)")));
        }
        let n = s.numel() as f64;
        let total: f64 = self
            .value(prob)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, y)| {
                let p = p.as_f64().clamp(eps, 1.0 - eps);
                let y = y.as_f64();
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        Ok(self.push(
            Tensor::scalar(T::from_f64(total / n)),
            Op::Bce {
                prob: prob.0,
                target: target.0,
                eps,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Internal(format!("loss {loss:?} not in graph")))?;
        if loss_node.value.shape() != Shape::scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        let mut out = Gradients::default();
        if !loss_node.requires_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite gradient at node {i}")));
                }
                match node.param {
                    Some(id) => out.params.push((id, g)),
                    None => {
                        out.leaves.insert(i, g);
                    }
                }
                continue;
            }
            for input in node.op.inputs() {
                if input >= i {
                    return Err(Error::Internal(format!(
                        "node {i} depends on later node {input}: cycle in op graph"
                    )));
                }
            }
            self.backward_node(i, &g, &mut grads)?;
        }
        out.params.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], target: usize, delta: Vec<T>) {
        if !self.nodes[target].requires_grad {
            return;
        }
        match grads[target].as_mut() {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            None => grads[target] = Some(delta),
        }
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.as_ref();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let x = self.nodes[*input].value.as_ref();
                let w = self.nodes[*weight].value.as_ref();
                let geom = ConvGeometry::new(x.shape(), w.shape(), *stride, *padding)?;
                let r = kernels::conv2d_backward(
                    x.data(),
                    x.shape().batch,
                    w.data(),
                    g,
                    &geom,
                    self.needs(*input),
                    self.needs(*weight),
                    bias.is_some_and(|b| self.needs(b)),
                );
                if let Some(dx) = r.input {
                    self.accumulate(grads, *input, dx);
                }
                if let Some(dw) = r.weight {
                    self.accumulate(grads, *weight, dw);
                }
                if let (Some(b), Some(db)) = (bias, r.bias) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![T::zero(); self.nodes[*input].value.shape().numel()];
                for (gv, &idx) in g.iter().zip(argmax) {
                    dx[idx as usize] += *gv;
                }
                self.accumulate(grads, *input, dx);
            }
            Op::Resize { input } => {
                let s = out.shape();
                let dx = kernels::resize_backward(g, self.nodes[*input].value.shape(), s.height, s.width);
                self.accumulate(grads, *input, dx);
            }
            Op::Activation { input, mode } => {
                let y = out.data();
                let dx: Vec<T> = match mode {
                    ActivationMode::Relu => y.iter().zip(g).map(|(y, g)| if *y > T::zero() { *g } else { T::zero() }).collect(),
                    ActivationMode::Sigmoid => y.iter().zip(g).map(|(y, g)| *g * *y * (T::one() - *y)).collect(),
                    ActivationMode::Tanh => y.iter().zip(g).map(|(y, g)| *g * (T::one() - *y * *y)).collect(),
                    ActivationMode::None => g.to_vec(),
                };
                self.accumulate(grads, *input, dx);
            }
            Op::Concat { parts } => {
                let s = out.shape();
                let plane = s.plane();
                let mut offset = 0;
                for &p in parts {
                    let c = self.nodes[p].value.shape().channels;
                    if self.needs(p) {
                        let mut dx = Vec::with_capacity(s.batch * c * plane);
                        for b in 0..s.batch {
                            let base = (b * s.channels + offset) * plane;
                            dx.extend_from_slice(&g[base..base + c * plane]);
                        }
                        self.accumulate(grads, p, dx);
                    }
                    offset += c;
                }
            }
            Op::Slice { input, start } => {
                let si = self.nodes[*input].value.shape();
                let len = out.shape().channels;
                let plane = si.plane();
                let mut dx = vec![T::zero(); si.numel()];
                for b in 0..si.batch {
                    let dst = (b * si.channels + start) * plane;
                    let src = b * len * plane;
                    dx[dst..dst + len * plane].copy_from_slice(&g[src..src + len * plane]);
                }
                self.accumulate(grads, *input, dx);
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.to_vec());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Mul { a, b } => {
                let av = self.nodes[*a].value.data();
                let bv = self.nodes[*b].value.data();
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.iter().zip(bv).map(|(g, b)| *g * *b).collect());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.iter().zip(av).map(|(g, a)| *g * *a).collect());
                }
            }
            Op::MulChannel { x, gate } => {
                let sx = self.nodes[*x].value.shape();
                let plane = sx.plane();
                let xv = self.nodes[*x].value.data();
                let gv = self.nodes[*gate].value.data();
                if self.needs(*x) {
                    let mut dx = Vec::with_capacity(sx.numel());
                    for b in 0..sx.batch {
                        let gate_plane = &gv[b * plane..(b + 1) * plane];
                        for c in 0..sx.channels {
                            let base = (b * sx.channels + c) * plane;
                            dx.extend(g[base..base + plane].iter().zip(gate_plane).map(|(a, b)| *a * *b));
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*gate) {
                    let mut dg = vec![T::zero(); sx.batch * plane];
                    for b in 0..sx.batch {
                        for c in 0..sx.channels {
                            let base = (b * sx.channels + c) * plane;
                            for p in 0..plane {
                                dg[b * plane + p] += g[base + p] * xv[base + p];
                            }
                        }
                    }
                    self.accumulate(grads, *gate, dg);
                }
            }
            Op::Scale { input, factor } => {
                let f = T::from_f64(*factor);
                self.accumulate(grads, *input, g.iter().map(|v| *v * f).collect());
            }
            Op::Sum { input } => {
                let n = self.nodes[*input].value.shape().numel();
                self.accumulate(grads, *input, vec![g[0]; n]);
            }
            Op::Mean { input } => {
                let n = self.nodes[*input].value.shape().numel();
                self.accumulate(grads, *input, vec![g[0] / T::from_f64(n as f64); n]);
            }
            Op::Mse { pred, target } => {
                let p = self.nodes[*pred].value.data();
                let t = self.nodes[*target].value.data();
                let k = g[0] * T::from_f64(2.0 / p.len() as f64);
                if self.needs(*pred) {
                    self.accumulate(grads, *pred, p.iter().zip(t).map(|(p, t)| k * (*p - *t)).collect());
                }
                if self.needs(*target) {
                    self.accumulate(grads, *target, p.iter().zip(t).map(|(p, t)| k * (*t - *p)).collect());
                }
            }
            Op::Bce { prob, target, eps } => {
                let p = self.nodes[*prob].value.data();
                let y = self.nodes[*target].value.data();
                let n = p.len() as f64;
                let scale = g[0].as_f64() / n;
                if self.needs(*prob) {
                    let dp = p
                        .iter()
                        .zip(y)
                        .map(|(p, y)| {
                            let pv = p.as_f64();
                            if pv < *eps || pv > 1.0 - *eps {
                                return T::zero();
                            }
                            let yv = y.as_f64();
                            T::from_f64(-scale * (yv / pv - (1.0 - yv) / (1.0 - pv)))
                        })
                        .collect();
                    self.accumulate(grads, *prob, dp);
                }
                if self.needs(*target) {
                    let dy = p
                        .iter()
                        .map(|p| {
                            let pv = p.as_f64().clamp(*eps, 1.0 - *eps);
                            T::from_f64(-scale * (pv.ln() - (1.0 - pv).ln()))
                        })
                        .collect();
                    self.accumulate(grads, *target, dy);
                }
            }
        }
        Ok(())
    }
}
