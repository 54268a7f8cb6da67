//! Randomized attention noise injection: a data-independent mask in `[0, 1]` applied as the
//! residual `(I + diag(M)) h`.

use crate::error::{shape_err, HycasError, Result};
use crate::rng;
use crate::scalar::Real;
use crate::tensor::{Graph, Padding, Tensor, Var};

/// Number of multiplicative stages in the mask.
pub const DEFAULT_STAGES: usize = 4;

/// Trainable state of a mask generator over `C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RaniParams<S> {
    /// `(1, 1, C, C)` kernel of the local attention.
    pub local_conv: Tensor<S>,
    /// `(C, C)` weights and `(C)` biases of the channel attention.
    pub ca_dense1: Tensor<S>,
    pub ca_bias1: Tensor<S>,
    pub ca_dense2: Tensor<S>,
    pub ca_bias2: Tensor<S>,
    pub sigma_g: Tensor<S>,
    pub sigma_l: Tensor<S>,
    pub stages: usize,
}

impl<S: Real> RaniParams<S> {
    pub fn init(channels: usize, seed: u64) -> Self {
        let scale = 1.0 / (channels as f64).sqrt();
        let mut r = rng::rng_from(seed);
        let c = channels;
        Self {
            local_conv: Tensor::new(&[1, 1, c, c], rng::gaussian_vec(&mut r, c * c, scale)).unwrap(),
            ca_dense1: Tensor::new(&[c, c], rng::gaussian_vec(&mut r, c * c, scale)).unwrap(),
            ca_bias1: Tensor::zeros(&[c]),
            ca_dense2: Tensor::new(&[c, c], rng::gaussian_vec(&mut r, c * c, scale)).unwrap(),
            ca_bias2: Tensor::zeros(&[c]),
            sigma_g: Tensor::full(&[c], S::lit(0.5)),
            sigma_l: Tensor::full(&[c], S::lit(0.5)),
            stages: DEFAULT_STAGES,
        }
    }

    pub fn channels(&self) -> usize {
        self.sigma_g.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let ok = self.local_conv.shape() == [1, 1, c, c]
            && self.ca_dense1.shape() == [c, c]
            && self.ca_dense2.shape() == [c, c]
            && self.ca_bias1.shape() == [c]
            && self.ca_bias2.shape() == [c]
            && self.sigma_l.shape() == [c];
        if !ok {
            return shape_err("rani", format!("inconsistent parameter shapes for {} channels", c));
        }
        if self.stages == 0 {
            return Err(HycasError::InvalidArgument("RANI needs at least one stage".into()));
        }
        if !self.sigma_g.data().iter().chain(self.sigma_l.data()).all(|v| v.is_finite()) {
            return Err(HycasError::InvalidModel("non-finite RANI scale".into()));
        }
        Ok(())
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for (name, t) in self.named() {
            f(&format!("{prefix}.{name}"), t);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        let Self { local_conv, ca_dense1, ca_bias1, ca_dense2, ca_bias2, sigma_g, sigma_l, .. } = self;
        let items: [(&str, &mut Tensor<S>); 7] = [
            ("local", local_conv),
            ("ca1.w", ca_dense1),
            ("ca1.b", ca_bias1),
            ("ca2.w", ca_dense2),
            ("ca2.b", ca_bias2),
            ("sigma_g", sigma_g),
            ("sigma_l", sigma_l),
        ];
        for (name, t) in items {
            f(&format!("{prefix}.{name}"), t);
        }
    }

    fn named(&self) -> [(&str, &Tensor<S>); 7] {
        [
            ("local", &self.local_conv),
            ("ca1.w", &self.ca_dense1),
            ("ca1.b", &self.ca_bias1),
            ("ca2.w", &self.ca_dense2),
            ("ca2.b", &self.ca_bias2),
            ("sigma_g", &self.sigma_g),
            ("sigma_l", &self.sigma_l),
        ]
    }
}

/// Records the mask computation and returns a `(1, H, W, C)` node.
///
/// Each stage feeds a seeded Gaussian surrogate (never the live features) through the local
/// and channel attentions, perturbs both with self-modulated Gaussian noise, clips to
/// `[0, 1]`, and the stages are multiplied together.
pub fn rani_mask_node<S: Real>(
    g: &mut Graph<S>,
    params: &RaniParams<S>,
    prefix: &str,
    hw: (usize, usize),
    omega_seed: u64,
) -> Result<Var> {
    params.validate()?;
    let (h, w) = hw;
    let c = params.channels();
    let p = |g: &mut Graph<S>, name: &str, t: &Tensor<S>| g.param(&format!("{prefix}.{name}"), t);
    let local = p(g, "local", &params.local_conv);
    let d1 = p(g, "ca1.w", &params.ca_dense1);
    let b1 = p(g, "ca1.b", &params.ca_bias1);
    let d2 = p(g, "ca2.w", &params.ca_dense2);
    let b2 = p(g, "ca2.b", &params.ca_bias2);
    let sg = p(g, "sigma_g", &params.sigma_g);
    let sl = p(g, "sigma_l", &params.sigma_l);
    let sg = g.reshape(sg, &[1, c])?;
    let sl = g.reshape(sl, &[1, c])?;

    let mut mask: Option<Var> = None;
    for stage in 0..params.stages {
        let mut r = rng::rng_from(rng::derive(omega_seed, &[stage as u64]));
        let z = g.constant(Tensor::new(&[1, h, w, c], rng::gaussian_vec(&mut r, h * w * c, 1.0))?);
        let eta_g = g.constant(Tensor::new(&[1, c], rng::gaussian_vec(&mut r, c, 1.0))?);
        let eta_l = g.constant(Tensor::new(&[1, c], rng::gaussian_vec(&mut r, c, 1.0))?);

        let la = g.conv2d(z, local, Padding::Circular, 1)?;
        let la = g.sigmoid(la)?;
        let pooled = g.gap(z)?;
        let hidden = g.dense(pooled, d1, b1)?;
        let hidden = g.relu(hidden)?;
        let ca = g.dense(hidden, d2, b2)?;
        let ca = g.sigmoid(ca)?;

        let eta_g = self_modulate(g, eta_g, sg)?;
        let eta_l = self_modulate(g, eta_l, sl)?;

        let gamma_g = g.add(eta_g, ca)?;
        let gamma_g = g.clamp01(gamma_g)?;
        let eta_l = g.reshape(eta_l, &[c])?;
        let eta_l = g.expand(eta_l, &[1, h, w])?;
        let gamma_l = g.add(eta_l, la)?;
        let gamma_l = g.clamp01(gamma_l)?;

        let gamma_g = g.reshape(gamma_g, &[c])?;
        let gamma_g = g.expand(gamma_g, &[1, h, w])?;
        let stage_map = g.hadamard(gamma_g, gamma_l)?;
        mask = Some(match mask {
            None => stage_map,
            Some(m) => g.hadamard(m, stage_map)?,
        });
    }
    Ok(mask.expect("at least one stage"))
}

/// Two rounds of `eta <- eta * (sigma + eta * sigma)`.
fn self_modulate<S: Real>(g: &mut Graph<S>, mut eta: Var, sigma: Var) -> Result<Var> {
    for _ in 0..2 {
        let es = g.hadamard(eta, sigma)?;
        let inner = g.add(sigma, es)?;
        eta = g.hadamard(eta, inner)?;
    }
    Ok(eta)
}

/// Evaluates the mask without recording gradients; shape `(H, W, C)`.
pub fn rani_mask<S: Real>(hw: (usize, usize), params: &RaniParams<S>, omega_seed: u64) -> Result<Tensor<S>> {
    let mut g = Graph::frozen();
    let m = rani_mask_node(&mut g, params, "rani", hw, omega_seed)?;
    g.value(m).reshape(&[hw.0, hw.1, params.channels()])
}

/// Records `(I + diag(M)) h` where `mask` is `(1, H, W, C)` and `h` is `(N, H, W, C)`.
pub fn rani_residual<S: Real>(g: &mut Graph<S>, h: Var, mask: Var, beta: S) -> Result<Var> {
    let n = g.shape(h)[0];
    let inner = g.shape(mask)[1..].to_vec();
    let m = g.reshape(mask, &inner)?;
    let m = g.expand(m, &[n])?;
    let dh = g.hadamard(m, h)?;
    let base = if beta == S::one() { h } else { g.scale(h, beta)? };
    g.add(base, dh)
}

/// `(I + diag(M)) h` on plain tensors; `mask` is `(H, W, C)` and `h` is `(N, H, W, C)`.
pub fn rani_apply<S: Real>(h: &Tensor<S>, mask: &Tensor<S>) -> Result<Tensor<S>> {
    let inner = &h.shape()[1.min(h.shape().len())..];
    if inner != mask.shape() {
        return shape_err("rani_apply", format!("features {:?} vs mask {:?}", h.shape(), mask.shape()));
    }
    let m = mask.data();
    let data = h.data().iter().enumerate().map(|(i, &v)| v + m[i % m.len()] * v).collect();
    Tensor::new(h.shape(), data)
}
