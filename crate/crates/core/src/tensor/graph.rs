//! Reverse-mode differentiation over an explicitly recorded list of primitive operations.
//!
//! Every operation appends one node holding its output value. `backward` walks the node
//! list once in reverse execution order. Parameters are registered by name so gradients can
//! be routed back to the owning model without sharing mutable state with the graph.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{shape_err, HycasError, Result};
use crate::scalar::Real;
use crate::spectral::dct::PlaneProjector;

use super::kernels::{self, ConvGeom};
use super::{nhwc, Padding, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone)]
enum Op<S: Real> {
    Leaf,
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    Dense { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    GroupSort2(Var),
    Clamp01(Var),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, S),
    ScaleBy { x: Var, s: Var },
    Expand { x: Var, lead: Vec<usize> },
    Reshape { x: Var, shape: Vec<usize> },
    Gap(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxCe { logits: Var, targets: Vec<usize>, reduction: Reduction },
    SoftmaxAxis0(Var),
    Row { x: Var, row: usize },
    Project { x: Var, proj: Arc<PlaneProjector<S>> },
}

#[derive(Debug, Clone)]
struct Node<S: Real> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// The computation record: an append-only tape of executed primitives.
#[derive(Debug, Clone, Default)]
pub struct Graph<S: Real> {
    nodes: Vec<Node<S>>,
    params: Vec<(String, Var)>,
    frozen: bool,
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    params: HashMap<String, Var>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a named parameter; `None` when the loss does not depend on it.
    pub fn param(&self, name: &str) -> Option<&[S]> {
        self.params.get(name).and_then(|&v| self.get(v))
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), frozen: false }
    }

    /// A graph whose registered parameters never receive gradients. Input gradients (for
    /// attacks) remain available and the sweep skips all kernel-gradient work.
    pub fn frozen() -> Self {
        Self { frozen: true, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn leaf(&mut self, t: Tensor<S>, requires_grad: bool) -> Var {
        let mut value = t;
        value.zero_grad();
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.leaf(t, false)
    }

    /// An unnamed leaf that receives a gradient (attack inputs, probes).
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.leaf(t, true)
    }

    /// Registers a named trainable parameter. Registering the same name twice reuses the
    /// first node so gradients from every use accumulate in one place.
    pub fn param(&mut self, name: &str, t: &Tensor<S>) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return v;
        }
        let v = self.leaf(t.clone(), !self.frozen);
        self.params.push((name.to_string(), v));
        v
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    /// Overwrites a leaf value; follow with [`Graph::replay`] to refresh dependents.
    pub fn set_leaf(&mut self, v: Var, t: Tensor<S>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(HycasError::InvalidArgument("set_leaf on a non-leaf node".into()));
        }
        if node.value.shape() != t.shape() {
            return shape_err("set_leaf", format!("{:?} vs {:?}", node.value.shape(), t.shape()));
        }
        node.value = t;
        Ok(())
    }

    /// Re-executes every recorded operation in order from the current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let value = self.eval(&self.nodes[i].op)?;
            self.nodes[i].value = value;
        }
        Ok(())
    }

    fn push(&mut self, op: Op<S>) -> Result<Var> {
        let value = self.eval(&op)?;
        let requires_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op<S>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Conv2d { x, k, .. } => vec![*x, *k],
            Op::Dense { x, w, b } => vec![*x, *w, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Hadamard(a, b) => vec![*a, *b],
            Op::ScaleBy { x, s } => vec![*x, *s],
            Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::GroupSort2(x)
            | Op::Clamp01(x)
            | Op::Exp(x)
            | Op::Scale(x, _)
            | Op::Gap(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SoftmaxAxis0(x) => vec![*x],
            Op::Expand { x, .. } | Op::Reshape { x, .. } | Op::Project { x, .. } | Op::Row { x, .. } => vec![*x],
            Op::SoftmaxCe { logits, .. } => vec![*logits],
        }
    }

    fn eval(&self, op: &Op<S>) -> Result<Tensor<S>> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let unary = |x: &Var, f: &dyn Fn(S) -> S| val(x).map(f);
        Ok(match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::Conv2d { x, k, geom } => {
                Tensor::new(&geom.out_shape(), kernels::conv2d(val(x).data(), val(k).data(), geom))?
            }
            Op::Dense { x, w, b } => {
                let (n, f) = (val(x).shape()[0], val(x).shape()[1]);
                let o = val(w).shape()[0];
                Tensor::new(&[n, o], kernels::dense(val(x).data(), val(w).data(), val(b).data(), n, f, o))?
            }
            Op::Relu(x) => unary(x, &|v| v.max(S::zero())),
            Op::Sigmoid(x) => unary(x, &sigmoid),
            Op::Clamp01(x) => unary(x, &|v| v.max(S::zero()).min(S::one())),
            Op::Exp(x) => unary(x, &|v| v.exp()),
            Op::Scale(x, s) => unary(x, &|v| v * *s),
            Op::GroupSort2(x) => {
                let mut out = val(x).clone();
                for pair in out.data_mut().chunks_exact_mut(2) {
                    if pair[1] > pair[0] {
                        pair.swap(0, 1);
                    }
                }
                out
            }
            Op::Add(a, b) => val(a).add(val(b))?,
            Op::Sub(a, b) => val(a).sub(val(b))?,
            Op::Hadamard(a, b) => {
                let data = val(a).data().iter().zip(val(b).data()).map(|(&p, &q)| p * q).collect();
                Tensor::new(val(a).shape(), data)?
            }
            Op::ScaleBy { x, s } => {
                let s = val(s).data()[0];
                unary(x, &|v| v * s)
            }
            Op::Expand { x, lead } => {
                let reps: usize = lead.iter().product();
                let src = val(x);
                let mut data = Vec::with_capacity(reps * src.len());
                for _ in 0..reps {
                    data.extend_from_slice(src.data());
                }
                let mut shape = lead.clone();
                shape.extend_from_slice(src.shape());
                Tensor::new(&shape, data)?
            }
            Op::Reshape { x, shape } => val(x).reshape(shape)?,
            Op::Gap(x) => {
                let [n, h, w, c] = nhwc(val(x).shape(), "gap")?;
                let mut out = vec![S::zero(); n * c];
                let inv = S::one() / S::lit((h * w) as f64);
                for (p, px) in val(x).data().chunks_exact(c).enumerate() {
                    let row = p / (h * w);
                    for (o, &v) in out[row * c..(row + 1) * c].iter_mut().zip(px) {
                        *o += v * inv;
                    }
                }
                Tensor::new(&[n, c], out)?
            }
            Op::Sum(x) => Tensor::scalar(val(x).data().iter().copied().sum()),
            Op::Mean(x) => {
                let t = val(x);
                Tensor::scalar(t.data().iter().copied().sum::<S>() / S::lit(t.len() as f64))
            }
            Op::SoftmaxCe { logits, targets, reduction } => {
                let t = val(logits);
                let k = t.shape()[1];
                let mut total = S::zero();
                for (row, &y) in t.data().chunks_exact(k).zip(targets) {
                    total += log_sum_exp(row) - row[y];
                }
                if *reduction == Reduction::Mean {
                    total /= S::lit(targets.len() as f64);
                }
                Tensor::scalar(total)
            }
            Op::SoftmaxAxis0(x) => {
                let t = val(x);
                let (rows, cols) = (t.shape()[0], t.shape()[1]);
                let mut out = vec![S::zero(); rows * cols];
                for c in 0..cols {
                    let m = (0..rows).map(|r| t.data()[r * cols + c]).fold(S::neg_infinity(), S::max);
                    let mut z = S::zero();
                    for r in 0..rows {
                        let e = (t.data()[r * cols + c] - m).exp();
                        out[r * cols + c] = e;
                        z += e;
                    }
                    for r in 0..rows {
                        out[r * cols + c] /= z;
                    }
                }
                Tensor::new(t.shape(), out)?
            }
            Op::Row { x, row } => {
                let cols = val(x).shape()[1];
                Tensor::new(&[cols], val(x).data()[row * cols..(row + 1) * cols].to_vec())?
            }
            Op::Project { x, proj } => proj.apply(val(x))?,
        })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// NHWC convolution. `kernel` has shape `(kh, kw, c_in, c_out)`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, padding: Padding, stride: usize) -> Result<Var> {
        let [n, h, w, cin] = nhwc(self.shape(x), "conv2d")?;
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 4 {
            return shape_err("conv2d", format!("kernel must be (kh,kw,cin,cout), got {:?}", ks));
        }
        if ks[2] != cin {
            return shape_err("conv2d", format!("kernel expects {} input channels, input has {}", ks[2], cin));
        }
        if stride == 0 {
            return Err(HycasError::InvalidArgument("conv2d stride must be positive".into()));
        }
        let geom = ConvGeom { n, h, w, cin, kh: ks[0], kw: ks[1], cout: ks[3], stride, padding };
        self.push(Op::Conv2d { x, k: kernel, geom })
    }

    /// Affine map on `(n, f)` rows with `weight: (o, f)`, `bias: (o)`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] || bs != [ws[0]] {
            return shape_err(
                "dense",
                format!("input {:?}, weight {:?}, bias {:?}", xs, ws, bs),
            );
        }
        self.push(Op::Dense { x, w: weight, b: bias })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sigmoid(x))
    }

    /// Sorts each disjoint pair of channels in descending order (MaxMin).
    pub fn groupsort2(&mut self, x: Var) -> Result<Var> {
        let c = *self.shape(x).last().unwrap_or(&0);
        if c % 2 != 0 {
            return shape_err("groupsort2", format!("channel count {} is odd", c));
        }
        self.push(Op::GroupSort2(x))
    }

    /// `min(1, max(0, x))`.
    pub fn clamp01(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Clamp01(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Exp(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.push(Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        self.push(Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, x: Var, s: S) -> Result<Var> {
        self.push(Op::Scale(x, s))
    }

    /// Multiplies a tensor by a single-element tensor held in the graph.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return shape_err("scale_by", format!("scale must hold one value, got {:?}", self.shape(s)));
        }
        self.push(Op::ScaleBy { x, s })
    }

    /// Tiles `x` to shape `lead ++ shape(x)`.
    pub fn expand(&mut self, x: Var, lead: &[usize]) -> Result<Var> {
        self.push(Op::Expand { x, lead: lead.to_vec() })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return shape_err("reshape", format!("{:?} -> {:?}", self.shape(x), shape));
        }
        self.push(Op::Reshape { x, shape: shape.to_vec() })
    }

    /// Global average pooling `(N,H,W,C) -> (N,C)`.
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        nhwc(self.shape(x), "gap")?;
        self.push(Op::Gap(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Mean(x))
    }

    /// Softmax cross-entropy of `(n, k)` logits against class indices.
    pub fn softmax_ce(&mut self, logits: Var, targets: &[usize], reduction: Reduction) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
            return shape_err("softmax_ce", format!("logits {:?} vs {} targets", s, targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= s[1]) {
            return Err(HycasError::InvalidArgument(format!(
                "target class {} out of range for {} classes",
                bad, s[1]
            )));
        }
        self.push(Op::SoftmaxCe { logits, targets: targets.to_vec(), reduction })
    }

    /// Softmax down each column of a 2-D tensor.
    pub fn softmax_axis0(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return shape_err("softmax_axis0", format!("expected 2-D, got {:?}", self.shape(x)));
        }
        self.push(Op::SoftmaxAxis0(x))
    }

    /// Row `row` of a 2-D tensor as a vector.
    pub fn row(&mut self, x: Var, row: usize) -> Result<Var> {
        match self.shape(x) {
            [r, _] if row < *r => self.push(Op::Row { x, row }),
            s => shape_err("row", format!("row {} of {:?}", row, s)),
        }
    }

    /// Applies a self-adjoint per-plane projection (DCT low-pass) to an NHWC tensor.
    pub fn project(&mut self, x: Var, proj: Arc<PlaneProjector<S>>) -> Result<Var> {
        let [_, h, w, _] = nhwc(self.shape(x), "project")?;
        if (h, w) != proj.hw() {
            return shape_err("project", format!("plane {}x{} vs projector {:?}", h, w, proj.hw()));
        }
        self.push(Op::Project { x, proj })
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(HycasError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let params = self.params.iter().cloned().collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, op: &Op<S>, out: &Tensor<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let val = |v: &Var| &self.nodes[v.0].value;
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, contrib: Vec<S>| match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &c)| *a += c),
            slot @ None => *slot = Some(contrib),
        };
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, k, geom } => {
                if wants(x) {
                    send(*x, kernels::conv2d_adjoint(g, val(k).data(), geom));
                }
                if wants(k) {
                    send(*k, kernels::conv2d_kernel_grad(g, val(x).data(), geom));
                }
            }
            Op::Dense { x, w, b } => {
                let (n, f) = (val(x).shape()[0], val(x).shape()[1]);
                let o = val(w).shape()[0];
                if wants(x) {
                    let mut gx = vec![S::zero(); n * f];
                    for r in 0..n {
                        for j in 0..o {
                            let gj = g[r * o + j];
                            let wr = &val(w).data()[j * f..(j + 1) * f];
                            for (a, &wv) in gx[r * f..(r + 1) * f].iter_mut().zip(wr) {
                                *a += gj * wv;
                            }
                        }
                    }
                    send(*x, gx);
                }
                if wants(w) {
                    let mut gw = vec![S::zero(); o * f];
                    for r in 0..n {
                        let xr = &val(x).data()[r * f..(r + 1) * f];
                        for j in 0..o {
                            let gj = g[r * o + j];
                            for (a, &xv) in gw[j * f..(j + 1) * f].iter_mut().zip(xr) {
                                *a += gj * xv;
                            }
                        }
                    }
                    send(*w, gw);
                }
                if wants(b) {
                    let mut gb = vec![S::zero(); o];
                    for row in g.chunks_exact(o) {
                        gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                    send(*b, gb);
                }
            }
            Op::Relu(x) => {
                let gx = zip_map(g, val(x).data(), |gv, xv| if xv > S::zero() { gv } else { S::zero() });
                send(*x, gx);
            }
            Op::Sigmoid(x) => {
                send(*x, zip_map(g, out.data(), |gv, s| gv * s * (S::one() - s)));
            }
            Op::Clamp01(x) => {
                let inside = |v: S| v > S::zero() && v < S::one();
                send(*x, zip_map(g, val(x).data(), |gv, xv| if inside(xv) { gv } else { S::zero() }));
            }
            Op::Exp(x) => send(*x, zip_map(g, out.data(), |gv, e| gv * e)),
            Op::Scale(x, s) => send(*x, g.iter().map(|&v| v * *s).collect()),
            Op::ScaleBy { x, s } => {
                let sv = val(s).data()[0];
                if wants(x) {
                    send(*x, g.iter().map(|&v| v * sv).collect());
                }
                if wants(s) {
                    send(*s, vec![kernels::dot(g, val(x).data())]);
                }
            }
            Op::GroupSort2(x) => {
                let mut gx = vec![S::zero(); g.len()];
                for ((gp, xp), dst) in g.chunks_exact(2).zip(val(x).data().chunks_exact(2)).zip(gx.chunks_exact_mut(2)) {
                    if xp[1] > xp[0] {
                        dst[0] = gp[1];
                        dst[1] = gp[0];
                    } else {
                        dst.copy_from_slice(gp);
                    }
                }
                send(*x, gx);
            }
            Op::Add(a, b) => {
                if wants(a) {
                    send(*a, g.to_vec());
                }
                if wants(b) {
                    send(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    send(*a, g.to_vec());
                }
                if wants(b) {
                    send(*b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Hadamard(a, b) => {
                if wants(a) {
                    send(*a, zip_map(g, val(b).data(), |gv, bv| gv * bv));
                }
                if wants(b) {
                    send(*b, zip_map(g, val(a).data(), |gv, av| gv * av));
                }
            }
            Op::Expand { x, .. } => {
                let len = val(x).len();
                let mut gx = vec![S::zero(); len];
                for chunk in g.chunks_exact(len) {
                    gx.iter_mut().zip(chunk).for_each(|(a, &v)| *a += v);
                }
                send(*x, gx);
            }
            Op::Reshape { x, .. } => send(*x, g.to_vec()),
            Op::Gap(x) => {
                let s = val(x).shape();
                let (h, w, c) = (s[1], s[2], s[3]);
                let inv = S::one() / S::lit((h * w) as f64);
                let mut gx = vec![S::zero(); val(x).len()];
                for (p, px) in gx.chunks_exact_mut(c).enumerate() {
                    let row = p / (h * w);
                    px.iter_mut().zip(&g[row * c..(row + 1) * c]).for_each(|(a, &v)| *a = v * inv);
                }
                send(*x, gx);
            }
            Op::Sum(x) => send(*x, vec![g[0]; val(x).len()]),
            Op::Mean(x) => {
                let n = val(x).len();
                send(*x, vec![g[0] / S::lit(n as f64); n]);
            }
            Op::SoftmaxCe { logits, targets, reduction } => {
                let t = val(logits);
                let k = t.shape()[1];
                let scale = match reduction {
                    Reduction::Mean => g[0] / S::lit(targets.len() as f64),
                    Reduction::Sum => g[0],
                };
                let mut gl = Vec::with_capacity(t.len());
                for (row, &y) in t.data().chunks_exact(k).zip(targets) {
                    let lse = log_sum_exp(row);
                    for (j, &v) in row.iter().enumerate() {
                        let p = (v - lse).exp();
                        let onehot = if j == y { S::one() } else { S::zero() };
                        gl.push((p - onehot) * scale);
                    }
                }
                send(*logits, gl);
            }
            Op::SoftmaxAxis0(x) => {
                let (rows, cols) = (out.shape()[0], out.shape()[1]);
                let a = out.data();
                let mut gx = vec![S::zero(); rows * cols];
                for c in 0..cols {
                    let inner: S = (0..rows).map(|r| g[r * cols + c] * a[r * cols + c]).sum();
                    for r in 0..rows {
                        gx[r * cols + c] = a[r * cols + c] * (g[r * cols + c] - inner);
                    }
                }
                send(*x, gx);
            }
            Op::Row { x, row } => {
                let cols = g.len();
                let mut gx = vec![S::zero(); val(x).len()];
                gx[row * cols..(row + 1) * cols].copy_from_slice(g);
                send(*x, gx);
            }
            Op::Project { x, proj } => {
                let gt = Tensor::new(out.shape(), g.to_vec()).expect("gradient matches output shape");
                let gx = proj.apply(&gt).expect("projector shape checked at record time");
                send(*x, gx.into_data());
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<S: Real>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn log_sum_exp<S: Real>(row: &[S]) -> S {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<S>().ln()
}

fn zip_map<S: Real>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
