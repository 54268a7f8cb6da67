//! Dense tensors and the reverse-mode differentiation tape.

mod graph;
pub mod kernels;

pub use graph::{Gradients, Graph, Reduction, Var};
pub(crate) use graph::log_sum_exp as graph_log_sum_exp;

use crate::error::{shape_err, HycasError, Result};
use crate::scalar::Real;

/// Boundary handling of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Indices wrap around (torus); the induced operator is doubly block circulant.
    Circular,
    /// Out-of-range taps read zero ("same" alignment).
    Zero,
}

/// Dense row-major tensor with an optional gradient accumulator.
///
/// Feature maps use `(N, H, W, C)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Real> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            );
        }
        Ok(Self { shape: shape.to_vec(), data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![S::zero(); numel], grad: None }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel], grad: None }
    }

    pub fn scalar(value: S) -> Self {
        Self { shape: Vec::new(), data: vec![value], grad: None }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| S::lit(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient accumulator, creating it on first use.
    pub fn accumulate_grad(&mut self, g: &[S]) -> Result<()> {
        if g.len() != self.data.len() {
            return shape_err("accumulate_grad", format!("{} vs {}", g.len(), self.data.len()));
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn take_grad(&mut self) -> Option<Vec<S>> {
        self.grad.take()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return shape_err("reshape", format!("{:?} -> {:?}", self.shape, shape));
        }
        Ok(Self { shape: shape.to_vec(), data: self.data.clone(), grad: None })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect(), grad: None }
    }

    pub fn scale_in_place(&mut self, s: S) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn norm2(&self) -> S {
        kernels::norm2(&self.data)
    }

    pub fn dot(&self, other: &Self) -> S {
        kernels::dot(&self.data, &other.data)
    }

    /// Element-wise difference; shapes must match exactly.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(op, format!("{:?} vs {:?}", self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { shape: self.shape.clone(), data, grad: None })
    }

    /// Slice `n` along the leading axis, keeping a leading extent of 1.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        if self.shape.is_empty() || n >= self.shape[0] {
            return Err(HycasError::InvalidArgument(format!(
                "batch index {} out of range for shape {:?}",
                n, self.shape
            )));
        }
        let per = self.data.len() / self.shape[0];
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Self { shape, data: self.data[n * per..(n + 1) * per].to_vec(), grad: None })
    }

    /// Stacks equally shaped `(1, ...)` or `(...)` items along a new/leading batch axis.
    pub fn stack(items: &[Tensor<S>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| HycasError::InvalidArgument("cannot stack zero tensors".into()))?;
        let inner: Vec<usize> = if first.shape.first() == Some(&1) {
            first.shape[1..].to_vec()
        } else {
            first.shape.clone()
        };
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.len() != first.len() {
                return shape_err("stack", format!("{:?} vs {:?}", t.shape, first.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Ok(Self { shape, data, grad: None })
    }

    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::lit(v.as_f64())).collect(),
            grad: None,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Index of the largest element (first on ties).
    pub fn argmax(&self) -> usize {
        kernels::argmax(&self.data)
    }
}

/// `(N, H, W, C)` extents of a rank-4 tensor.
pub(crate) fn nhwc(shape: &[usize], op: &'static str) -> Result<[usize; 4]> {
    match shape {
        [n, h, w, c] => Ok([*n, *h, *w, *c]),
        _ => shape_err(op, format!("expected (N,H,W,C), got {:?}", shape)),
    }
}
