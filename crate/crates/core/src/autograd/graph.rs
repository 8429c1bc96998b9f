use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::conv::{self, Conv2dSpec, PadMode};
use crate::kernels::{norm, resize, shuffle};
use crate::real::{lit, Real};
use crate::tensor::Tensor;

use super::params::{Gradients, ParamId, ParamStore};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Backward rule for operations defined outside this module.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;

    /// Gradients for each input, in input order; `None` for inputs that
    /// receive no gradient.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &Tensor<T>)
        -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Real> {
    Constant,
    Variable,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        pb: Option<Var>,
        spec: Conv2dSpec,
    },
    Depthwise {
        x: Var,
        w: Var,
        pad: (usize, usize),
        mode: PadMode,
    },
    Unshuffle(Var, usize),
    Shuffle(Var, usize),
    Resize(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    ScaleBy(Var, Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    MeanAll(Var),
    Concat(Vec<Var>),
    Narrow { x: Var, start: usize },
    Gap(Var),
    ChannelMul(Var, Var),
    SpatialMul(Var, Var),
    InstanceNorm(Var, norm::InstanceStats),
    Reshape(Var),
    Custom(Vec<Var>, Box<dyn CustomOp<T>>),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape of executed operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the tape is already a
/// topological order; [`Graph::backward`] walks it once in reverse.
/// Parameters are read from the borrowed [`ParamStore`]; gradients are
/// returned as [`Gradients`] and folded in with [`ParamStore::accumulate`].
pub struct Graph<'s, T: Real> {
    store: Option<&'s ParamStore<T>>,
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Graph<'static, T> {
    /// A graph without parameters (inputs only).
    pub fn detached() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }
}

impl<'s, T: Real> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Constant => false,
            Op::Variable | Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, &[])
    }

    /// Leaf whose gradient is reported through [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Variable, &[])
    }

    /// The node holding parameter `id`; created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let store = self
            .store
            .expect("Graph::param called on a graph without a parameter store");
        let value = store.get(id).value.clone();
        let v = self.push(value, Op::Param(id), &[]);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        self.conv2d_prebias(x, w, b, None, spec)
    }

    /// Convolution where `pre_bias[o]` is added to the input seen by output channel `o`.
    pub fn conv2d_prebias(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        pb: Option<Var>,
        spec: Conv2dSpec,
    ) -> Result<Var> {
        let value = conv::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            pb.map(|p| self.value(p)),
            &spec,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        inputs.extend(pb);
        Ok(self.push(value, Op::Conv2d { x, w, b, pb, spec }, &inputs))
    }

    /// Per-channel (or shared, when `w` has one channel) stride-1 convolution.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, pad: (usize, usize), mode: PadMode) -> Result<Var> {
        let value = conv::depthwise_forward(self.value(x), self.value(w), pad, mode)?;
        Ok(self.push(value, Op::Depthwise { x, w, pad, mode }, &[x, w]))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        let value = shuffle::pixel_unshuffle(self.value(x), s)?;
        Ok(self.push(value, Op::Unshuffle(x, s), &[x]))
    }

    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        let value = shuffle::pixel_shuffle(self.value(x), s)?;
        Ok(self.push(value, Op::Shuffle(x, s), &[x]))
    }

    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = resize::bilinear_resize(self.value(x), out_h, out_w)?;
        Ok(self.push(value, Op::Resize(x), &[x]))
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.value(a).zip_map(self.value(b), op, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(value, Op::Div(a, b), &[a, b]))
    }

    /// Sum of one or more equally shaped nodes, left to right.
    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::shape("sum", "no operands"))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c_t: T = lit(c);
        let value = self.value(x).map(|v| v * c_t);
        self.push(value, Op::Scale(x, c), &[x])
    }

    /// Addition of a constant.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let c_t: T = lit(c);
        let value = self.value(x).map(|v| v + c_t);
        self.push(value, Op::Offset(x), &[x])
    }

    /// Multiplication by a one-element node.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let s_val = self.value(s).item().map_err(|_| {
            Error::shape("scale_by", format!("scale must hold one value, got {:?}", self.shape(s)))
        })?;
        let value = self.value(x).map(|v| v * s_val);
        Ok(self.push(value, Op::ScaleBy(x, s), &[x, s]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map(|v| lit(1.0 / (1.0 + (-v.as_f64()).exp())));
        self.push(value, Op::Sigmoid(x), &[x])
    }

    /// `max(alpha·x, x)`; the derivative at 0 is `alpha`.
    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        let a: T = lit(alpha);
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { a * v });
        self.push(value, Op::LeakyRelu(x, alpha), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        self.push(value, Op::Abs(x), &[x])
    }

    /// Mean of every element, accumulated in 64 bits.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(lit(self.value(x).mean()));
        self.push(value, Op::MeanAll(x), &[x])
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        const OP: &str = "concat";
        let first = *xs.first().ok_or_else(|| Error::shape(OP, "no operands"))?;
        let (n, _, h, w) = self.value(first).dims4(OP)?;
        let mut channels = Vec::with_capacity(xs.len());
        for &x in xs {
            let (nx, cx, hx, wx) = self.value(x).dims4(OP)?;
            for (axis, e, f) in [("N", n, nx), ("H", h, hx), ("W", w, wx)] {
                if e != f {
                    return Err(Error::dim(OP, axis, e, f));
                }
            }
            channels.push(cx);
        }
        let total: usize = channels.iter().sum();
        let mut data = Vec::with_capacity(n * total * h * w);
        for b in 0..n {
            for (&x, &c) in xs.iter().zip(&channels) {
                let plane = c * h * w;
                data.extend_from_slice(&self.value(x).data()[b * plane..(b + 1) * plane]);
            }
        }
        let value = Tensor::new(&[n, total, h, w], data)?;
        Ok(self.push(value, Op::Concat(xs.to_vec()), xs))
    }

    /// Channels `start..start + len`.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        const OP: &str = "narrow";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        if start + len > c || len == 0 {
            return Err(Error::shape(OP, format!("channels {start}..{} of {c}", start + len)));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            data.extend_from_slice(&self.value(x).data()[base..base + len * plane]);
        }
        let value = Tensor::new(&[n, len, h, w], data)?;
        Ok(self.push(value, Op::Narrow { x, start }, &[x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let value = norm::global_avg_pool(self.value(x))?;
        Ok(self.push(value, Op::Gap(x), &[x]))
    }

    /// `x[n, c, :, :] · s[n, c]` with `s` of shape `[N, C, 1, 1]`.
    pub fn channel_mul(&mut self, x: Var, s: Var) -> Result<Var> {
        const OP: &str = "channel_mul";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        if self.shape(s) != [n, c, 1, 1] {
            return Err(Error::shape(OP, format!("scale shape {:?} for input {:?}", self.shape(s), self.shape(x))));
        }
        let sd = self.value(s).data();
        let plane = h * w;
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sd[i / plane.max(1)])
            .collect();
        let value = Tensor::new(&[n, c, h, w], data)?;
        Ok(self.push(value, Op::ChannelMul(x, s), &[x, s]))
    }

    /// `x[n, c, :, :] ⊙ m[n, 0, :, :]` with `m` of shape `[N, 1, H, W]`.
    pub fn spatial_mul(&mut self, x: Var, m: Var) -> Result<Var> {
        const OP: &str = "spatial_mul";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        if self.shape(m) != [n, 1, h, w] {
            return Err(Error::shape(OP, format!("mask shape {:?} for input {:?}", self.shape(m), self.shape(x))));
        }
        let md = self.value(m).data();
        let plane = h * w;
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * md[(i / (c * plane)) * plane + i % plane])
            .collect();
        let value = Tensor::new(&[n, c, h, w], data)?;
        Ok(self.push(value, Op::SpatialMul(x, m), &[x, m]))
    }

    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (value, stats) = norm::instance_norm(self.value(x), eps)?;
        Ok(self.push(value, Op::InstanceNorm(x, stats), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Records an operation whose value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), op), inputs)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Returns gradients for every parameter and variable the loss depends on.
    /// Parameters the loss does not reach are absent (their gradient is zero).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut out = Gradients::default();
        if !root.needs_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Param(id) => out.params.push((*id, g)),
                Op::Variable => out.leaves.push((i, g)),
                Op::Constant => {}
                _ => {
                    for (input, grad) in self.node_backward(node, &g)? {
                        let slot = &mut grads[input.0];
                        if !self.nodes[input.0].needs_grad {
                            continue;
                        }
                        match slot {
                            Some(acc) => acc.add_assign(&grad)?,
                            None => *slot = Some(grad),
                        }
                    }
                }
            }
        }
        out.params.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Constant | Op::Variable | Op::Param(_) => {}
            Op::Conv2d { x, w, b, pb, spec } => {
                let grads = conv::conv2d_backward(
                    val(*x),
                    val(*w),
                    pb.map(val),
                    b.is_some(),
                    g,
                    spec,
                    self.needs(*x),
                    self.needs(*w),
                )?;
                if let Some(dx) = grads.input {
                    out.push((*x, dx));
                }
                if let Some(dw) = grads.kernel {
                    out.push((*w, dw));
                }
                if let (Some(b), Some(db)) = (b, grads.bias) {
                    out.push((*b, db));
                }
                if let (Some(pb), Some(dpb)) = (pb, grads.pre_bias) {
                    out.push((*pb, dpb));
                }
            }
            Op::Depthwise { x, w, pad, mode } => {
                let (dx, dw) = conv::depthwise_backward(val(*x), val(*w), g, *pad, *mode)?;
                out.push((*x, dx));
                out.push((*w, dw));
            }
            Op::Unshuffle(x, s) => out.push((*x, shuffle::pixel_shuffle(g, *s)?)),
            Op::Shuffle(x, s) => out.push((*x, shuffle::pixel_unshuffle(g, *s)?)),
            Op::Resize(x) => out.push((*x, resize::bilinear_resize_backward(val(*x).shape(), g)?)),
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.zip_map(val(*b), "mul", |g, y| g * y)?));
                }
                if self.needs(*b) {
                    out.push((*b, g.zip_map(val(*a), "mul", |g, x| g * x)?));
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                if self.needs(*a) {
                    out.push((*a, g.zip_map(bv, "div", |g, y| g / y)?));
                }
                if self.needs(*b) {
                    let q = node.value.zip_map(bv, "div", |z, y| z / y)?;
                    out.push((*b, g.zip_map(&q, "div", |g, q| -g * q)?));
                }
            }
            Op::Scale(x, c) => {
                let c: T = lit(*c);
                out.push((*x, g.map(|v| v * c)));
            }
            Op::Offset(x) => out.push((*x, g.clone())),
            Op::ScaleBy(x, s) => {
                let sv = val(*s).item()?;
                out.push((*x, g.map(|v| v * sv)));
                let ds: f64 = g
                    .data()
                    .iter()
                    .zip(val(*x).data())
                    .map(|(a, b)| a.as_f64() * b.as_f64())
                    .sum();
                out.push((*s, Tensor::new(val(*s).shape(), vec![lit(ds)])?));
            }
            Op::Sigmoid(x) => {
                let dx = g.zip_map(&node.value, "sigmoid", |g, y| g * y * (T::one() - y))?;
                out.push((*x, dx));
            }
            Op::LeakyRelu(x, alpha) => {
                let a: T = lit(*alpha);
                let dx = g.zip_map(val(*x), "leaky_relu", |g, v| if v > T::zero() { g } else { g * a })?;
                out.push((*x, dx));
            }
            Op::Abs(x) => {
                let dx = g.zip_map(val(*x), "abs", |g, v| {
                    if v > T::zero() {
                        g
                    } else if v < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })?;
                out.push((*x, dx));
            }
            Op::MeanAll(x) => {
                let xv = val(*x);
                let s: T = lit(g.item()?.as_f64() / xv.numel() as f64);
                out.push((*x, Tensor::full(xv.shape(), s)));
            }
            Op::Concat(xs) => {
                let (n, total, h, w) = g.dims4("concat")?;
                let plane = h * w;
                let mut offset = 0;
                for &x in xs {
                    let c = val(x).shape()[1];
                    if self.needs(x) {
                        let mut data = Vec::with_capacity(n * c * plane);
                        for b in 0..n {
                            let base = (b * total + offset) * plane;
                            data.extend_from_slice(&g.data()[base..base + c * plane]);
                        }
                        out.push((x, Tensor::new(val(x).shape(), data)?));
                    }
                    offset += c;
                }
            }
            Op::Narrow { x, start } => {
                let (n, c, h, w) = val(*x).dims4("narrow")?;
                let len = g.shape()[1];
                let plane = h * w;
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    dx.data_mut()[dst..dst + len * plane]
                        .copy_from_slice(&g.data()[b * len * plane..(b + 1) * len * plane]);
                }
                out.push((*x, dx));
            }
            Op::Gap(x) => {
                let (_, _, h, w) = val(*x).dims4("global_avg_pool")?;
                let plane = h * w;
                let inv = 1.0 / plane as f64;
                let gd = g.data();
                let dx = Tensor::from_fn(val(*x).shape(), |i| lit(gd[i / plane].as_f64() * inv));
                out.push((*x, dx));
            }
            Op::ChannelMul(x, s) => {
                let (xv, sv) = (val(*x), val(*s));
                let plane = xv.numel() / sv.numel();
                let sd = sv.data();
                if self.needs(*x) {
                    let dx = Tensor::from_fn(xv.shape(), |i| g.data()[i] * sd[i / plane]);
                    out.push((*x, dx));
                }
                if self.needs(*s) {
                    let ds: Vec<T> = g
                        .data()
                        .chunks(plane)
                        .zip(xv.data().chunks(plane))
                        .map(|(gc, xc)| lit(gc.iter().zip(xc).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>()))
                        .collect();
                    out.push((*s, Tensor::new(sv.shape(), ds)?));
                }
            }
            Op::SpatialMul(x, m) => {
                let (xv, mv) = (val(*x), val(*m));
                let (n, c, h, w) = xv.dims4("spatial_mul")?;
                let plane = h * w;
                let md = mv.data();
                if self.needs(*x) {
                    let dx = Tensor::from_fn(xv.shape(), |i| {
                        g.data()[i] * md[(i / (c * plane)) * plane + i % plane]
                    });
                    out.push((*x, dx));
                }
                if self.needs(*m) {
                    let mut dm = vec![0.0f64; n * plane];
                    for (i, (gv, xv)) in g.data().iter().zip(xv.data()).enumerate() {
                        dm[(i / (c * plane)) * plane + i % plane] += gv.as_f64() * xv.as_f64();
                    }
                    out.push((*m, Tensor::new(mv.shape(), dm.into_iter().map(lit).collect())?));
                }
            }
            Op::InstanceNorm(x, stats) => {
                out.push((*x, norm::instance_norm_backward(val(*x), stats, g)?));
            }
            Op::Reshape(x) => out.push((*x, g.clone().reshape(val(*x).shape())?)),
            Op::Custom(inputs, op) => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let grads = op.backward(&vals, &node.value, g)?;
                if grads.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "{} returned {} gradients for {} inputs",
                        op.name(),
                        grads.len(),
                        inputs.len()
                    )));
                }
                for (&v, grad) in inputs.iter().zip(grads) {
                    if let Some(grad) = grad {
                        out.push((v, grad));
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_squares_gradient() {
        let x = Tensor::<f64>::new(&[4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let mut g = Graph::detached();
        let v = g.variable(x.clone());
        let sq = g.mul(v, v).unwrap();
        let loss = g.mean_all(sq);
        let grads = g.backward(loss).unwrap();
        let expect = x.map(|v| v / 2.0);
        assert_eq!(grads.wrt(v).unwrap(), &expect);
    }

    #[test]
    fn backward_on_non_scalar_is_contract_error() {
        let mut g = Graph::<f32>::detached();
        let v = g.variable(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn leaky_relu_values_and_subgradient() {
        let mut g = Graph::<f64>::detached();
        let v = g.variable(Tensor::new(&[3], vec![-1.0, 3.0, 0.0]).unwrap());
        let y = g.leaky_relu(v, 0.2);
        assert_eq!(g.value(y).data(), &[-0.2, 3.0, 0.0]);
        let s = g.mean_all(y);
        let grads = g.backward(s).unwrap();
        let d: Vec<f64> = grads.wrt(v).unwrap().data().iter().map(|x| x * 3.0).collect();
        assert_eq!(d, vec![0.2, 1.0, 0.2]);
    }

    #[test]
    fn sigmoid_zero_is_half() {
        let mut g = Graph::<f32>::detached();
        let v = g.constant(Tensor::zeros(&[1]));
        let s = g.sigmoid(v);
        assert_eq!(g.value(s).data(), &[0.5]);
    }

    #[test]
    fn unreached_parameters_get_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::ones(&[2]), true).unwrap();
        let b = store.add("b", Tensor::ones(&[2]), true).unwrap();
        let mut g = Graph::new(&store);
        let av = g.param(a);
        let _ = g.param(b);
        let loss = g.mean_all(av);
        let grads = g.backward(loss).unwrap();
        assert!(grads.param(a).is_some());
        assert!(grads.param(b).is_none());
    }
}
