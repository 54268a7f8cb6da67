//! Interfaces the certifier and the attacks are written against.

use crate::error::Result;
use crate::scalar::Real;
use crate::streams::NoiseState;
use crate::tensor::{kernels, Tensor};

/// A classifier whose output may depend on internal randomness.
///
/// The randomness of a [`NoiseState`] is first realized into a `Draw`; evaluating a batch
/// under one draw applies the same internal randomness to every sample.
pub trait Classifier<S: Real>: Sync {
    type Draw: Send + Sync;

    fn num_classes(&self) -> usize;

    /// `(H, W, C)` of one input.
    fn input_shape(&self) -> [usize; 3];

    fn draw(&self, noise: &NoiseState<S>) -> Result<Self::Draw>;

    /// `(N, K)` logits of an `(N, H, W, C)` batch under a realized draw.
    fn logits_drawn(&self, x: &Tensor<S>, draw: &Self::Draw) -> Result<Tensor<S>>;

    /// Logits under `noise`; its `epsilon`, when present, is added to the input first.
    fn logits(&self, x: &Tensor<S>, noise: &NoiseState<S>) -> Result<Tensor<S>> {
        let draw = self.draw(noise)?;
        match &noise.epsilon {
            Some(e) => self.logits_drawn(&x.add(e)?, &draw),
            None => self.logits_drawn(x, &draw),
        }
    }

    /// Certified upper bound on the Lipschitz constant of the logits, if one is known.
    fn lip_bound(&self) -> Option<f64> {
        None
    }

    fn predict_drawn(&self, x: &Tensor<S>, draw: &Self::Draw) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits_drawn(x, draw)?))
    }

    fn predict(&self, x: &Tensor<S>, noise: &NoiseState<S>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x, noise)?))
    }

    fn input_dim(&self) -> usize {
        self.input_shape().iter().product()
    }
}

/// A classifier that exposes input gradients of the cross-entropy loss.
pub trait Differentiable<S: Real>: Classifier<S> {
    /// Per-sample cross-entropy losses and the gradient of their sum with respect to `x`.
    fn loss_grad_drawn(&self, x: &Tensor<S>, y: &[usize], draw: &Self::Draw) -> Result<(Vec<S>, Tensor<S>)>;
}

pub fn argmax_rows<S: Real>(logits: &Tensor<S>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits.data().chunks_exact(k).map(kernels::argmax).collect()
}

/// Per-row softmax cross-entropy of `(N, K)` logits.
pub fn cross_entropy_rows<S: Real>(logits: &Tensor<S>, y: &[usize]) -> Vec<S> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .zip(y)
        .map(|(row, &t)| crate::tensor::graph_log_sum_exp(row) - row[t])
        .collect()
}
