//! The three stochastic streams. Each maps `(N, H, W, C_in)` to `(N, H, W, C_out)` and is
//! at most 2-Lipschitz for any fixed noise state.

mod noise;
pub mod rani;

use std::sync::Arc;

pub use noise::NoiseState;
pub use rani::{rani_apply, rani_mask, RaniParams};

use crate::error::{HycasError, Result};
use crate::rng;
use crate::scalar::Real;
use crate::spectral::{
    batch_aware_spectral_norm, lowpass_mask, make_orthogonal_mixer, rescale_kernel, spectral_norm_fourier,
    spectral_norm_power_iter, DctMask, KernelSpec, OrthoMixer, PlaneProjector, POWER_ITER_STEPS,
};
use crate::tensor::{nhwc, Graph, Padding, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Fdpan,
    Sncan,
    Rpfan,
}

impl StreamKind {
    /// Gate order.
    pub const ALL: [StreamKind; 3] = [StreamKind::Fdpan, StreamKind::Sncan, StreamKind::Rpfan];

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Fdpan => "fdpan",
            StreamKind::Sncan => "sncan",
            StreamKind::Rpfan => "rpfan",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub kernel_size: usize,
    pub cin: usize,
    pub cout: usize,
    pub hw: (usize, usize),
    pub padding: Padding,
    /// Fraction of low DCT rows/columns kept by the frequency stream.
    pub cutoff_rho: f64,
    /// Weight of the identity path in the frequency stream's residual, in `(0, 1]`.
    pub skip_beta: f64,
    /// Additionally divide the random projection by its exact norm when it exceeds 1.
    pub rpfan_guard: bool,
    pub rani: bool,
    /// Number of probe samples `N` in the batch-aware normalization of the projection. Held
    /// fixed so a sample's output never depends on the rest of its batch.
    pub probe_batch: usize,
}

impl StreamConfig {
    pub fn new(kernel_size: usize, cin: usize, cout: usize, hw: (usize, usize)) -> Self {
        Self {
            kernel_size,
            cin,
            cout,
            hw,
            padding: Padding::Circular,
            cutoff_rho: 0.5,
            skip_beta: 1.0,
            rpfan_guard: true,
            rani: true,
            probe_batch: 8,
        }
    }
}

/// The randomness of one stream realized for a given noise state.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamDraw<S> {
    /// `(1, H, W, C_out)` mask.
    pub mask: Option<Tensor<S>>,
    /// Normalized random projection (RPFAN only).
    pub projection: Option<KernelSpec<S>>,
}

/// Where a forward pass takes its randomness from.
#[derive(Debug, Clone, Copy)]
pub enum StreamSource<'a, S> {
    /// Compute masks on the tape so their parameters receive gradients.
    Live(&'a NoiseState<S>),
    /// Use a previously realized draw as constants.
    Drawn(&'a StreamDraw<S>),
}

#[derive(Debug, Clone)]
pub struct Stream<S> {
    pub kind: StreamKind,
    pub config: StreamConfig,
    /// Mixed into the noise seeds so streams and blocks draw independent randomness.
    pub salt: u64,
    /// Trainable kernel (SNCAN and FDPAN).
    pub kernel: Option<KernelSpec<S>>,
    pub mixer: Option<OrthoMixer>,
    pub mask: Option<DctMask>,
    projector: Option<Arc<PlaneProjector<S>>>,
    pub rani: Option<RaniParams<S>>,
}

impl<S: Real> Stream<S> {
    pub fn new(kind: StreamKind, config: StreamConfig, seed: u64) -> Result<Self> {
        let c = &config;
        if c.kernel_size == 0 || c.cin == 0 || c.cout == 0 || c.hw.0 == 0 || c.hw.1 == 0 {
            return Err(HycasError::InvalidArgument(format!("degenerate stream configuration {:?}", c)));
        }
        if !(c.skip_beta > 0.0 && c.skip_beta <= 1.0) {
            return Err(HycasError::InvalidArgument(format!("skip_beta {} outside (0, 1]", c.skip_beta)));
        }
        let salt = rng::derive(seed, &[rng::tag(kind.name())]);
        let trainable = matches!(kind, StreamKind::Sncan | StreamKind::Fdpan);
        let kernel = if trainable {
            let k = KernelSpec::gaussian(c.kernel_size, c.cin, c.cout, c.padding, rng::derive(salt, &[1]));
            Some(normalize_kernel(&k, c.hw, true)?)
        } else {
            None
        };
        let mixer = match kind {
            StreamKind::Sncan => None,
            _ => Some(make_orthogonal_mixer(c.cin, rng::derive(salt, &[2]))?),
        };
        let mask = match kind {
            StreamKind::Fdpan => Some(lowpass_mask(c.hw.0, c.hw.1, c.cutoff_rho)?),
            _ => None,
        };
        let projector = mask.as_ref().map(|m| Arc::new(PlaneProjector::new(m)));
        let rani = c.rani.then(|| RaniParams::init(c.cout, rng::derive(salt, &[3])));
        Ok(Self { kind, config, salt, kernel, mixer, mask, projector, rani })
    }

    /// Output shape for a batch of `n`.
    pub fn out_shape(&self, n: usize) -> [usize; 4] {
        [n, self.config.hw.0, self.config.hw.1, self.config.cout]
    }

    /// Records the stream on `g`; parameters are registered under `prefix`.
    pub fn forward_node(&self, g: &mut Graph<S>, x: Var, src: StreamSource<'_, S>, prefix: &str) -> Result<Var> {
        let [_, h, w, c] = nhwc(g.shape(x), self.kind.name())?;
        if (h, w) != self.config.hw || c != self.config.cin {
            return crate::error::shape_err(
                self.kind.name(),
                format!("input {:?} vs configured {:?} x {}", g.shape(x), self.config.hw, self.config.cin),
            );
        }
        let pad = self.config.padding;
        let core = match self.kind {
            StreamKind::Sncan => {
                let k = g.param(&format!("{prefix}.kernel"), &self.trained_kernel()?.kernel);
                g.conv2d(x, k, pad, 1)?
            }
            StreamKind::Rpfan => {
                let w_sn = match src {
                    StreamSource::Live(noise) => self.projection(noise)?.1,
                    StreamSource::Drawn(d) => d
                        .projection
                        .clone()
                        .ok_or_else(|| HycasError::InvalidArgument("draw lacks a projection".into()))?,
                };
                let u = g.constant(self.mixer_kernel().kernel);
                let mixed = g.conv2d(x, u, Padding::Circular, 1)?;
                let k = g.constant(w_sn.kernel);
                g.conv2d(mixed, k, pad, 1)?
            }
            StreamKind::Fdpan => {
                let proj = self.projector.clone().expect("frequency stream owns a projector");
                let low = g.project(x, proj)?;
                let u = g.constant(self.mixer_kernel().kernel);
                let mixed = g.conv2d(low, u, Padding::Circular, 1)?;
                let k = g.param(&format!("{prefix}.kernel"), &self.trained_kernel()?.kernel);
                g.conv2d(mixed, k, pad, 1)?
            }
        };
        let Some(params) = &self.rani else { return Ok(core) };
        let mask = match src {
            StreamSource::Live(noise) => {
                let seed = rng::derive(noise.omega_seed, &[self.salt]);
                rani::rani_mask_node(g, params, &format!("{prefix}.rani"), self.config.hw, seed)?
            }
            StreamSource::Drawn(d) => {
                let m = d.mask.clone().ok_or_else(|| HycasError::InvalidArgument("draw lacks a mask".into()))?;
                g.constant(m)
            }
        };
        let beta = match self.kind {
            StreamKind::Fdpan => S::lit(self.config.skip_beta),
            _ => S::one(),
        };
        rani::rani_residual(g, core, mask, beta)
    }

    /// Realizes the masks and projection this stream uses under `noise`.
    pub fn draw(&self, noise: &NoiseState<S>) -> Result<StreamDraw<S>> {
        let mask = match &self.rani {
            None => None,
            Some(params) => {
                let seed = rng::derive(noise.omega_seed, &[self.salt]);
                let (h, w) = self.config.hw;
                Some(rani_mask(self.config.hw, params, seed)?.reshape(&[1, h, w, self.config.cout])?)
            }
        };
        let projection = match self.kind {
            StreamKind::Rpfan => Some(self.projection(noise)?.1),
            _ => None,
        };
        Ok(StreamDraw { mask, projection })
    }

    /// Evaluates the stream without recording gradients.
    pub fn forward(&self, x: &Tensor<S>, noise: &NoiseState<S>) -> Result<Tensor<S>> {
        let draw = self.draw(noise)?;
        self.forward_drawn(x, &draw)
    }

    pub fn forward_drawn(&self, x: &Tensor<S>, draw: &StreamDraw<S>) -> Result<Tensor<S>> {
        let mut g = Graph::frozen();
        let xv = g.constant(x.clone());
        let out = self.forward_node(&mut g, xv, StreamSource::Drawn(draw), self.kind.name())?;
        Ok(g.value(out).clone())
    }

    /// The mask this stream draws under `noise`, shape `(H, W, C_out)`.
    pub fn mask_for(&self, noise: &NoiseState<S>) -> Option<Result<Tensor<S>>> {
        let params = self.rani.as_ref()?;
        Some(rani_mask(self.config.hw, params, rng::derive(noise.omega_seed, &[self.salt])))
    }

    fn trained_kernel(&self) -> Result<&KernelSpec<S>> {
        self.kernel.as_ref().ok_or_else(|| HycasError::InvalidModel(format!("{} has no kernel", self.kind.name())))
    }

    fn mixer_kernel(&self) -> KernelSpec<S> {
        self.mixer.as_ref().map(|m| m.kernel()).unwrap_or_else(|| OrthoMixer::identity(self.config.cin).kernel())
    }

    /// Unnormalized random-projection kernel drawn from the noise state.
    pub fn raw_projection(&self, noise: &NoiseState<S>) -> KernelSpec<S> {
        let c = &self.config;
        let psi = rng::derive(noise.psi_seed, &[self.salt]);
        KernelSpec::gaussian(c.kernel_size, c.cin, c.cout, c.padding, rng::derive(psi, &[1]))
    }

    /// Batch-aware normalized projection: `(RQ, W_SN)`. With the guard enabled and circular
    /// padding, `W_SN` is further divided by its exact norm when that exceeds 1.
    pub fn projection(&self, noise: &NoiseState<S>) -> Result<(f64, KernelSpec<S>)> {
        let psi = rng::derive(noise.psi_seed, &[self.salt]);
        let w0 = self.raw_projection(noise);
        let n = self.config.probe_batch.max(1);
        let (rq, mut w_sn) = batch_aware_spectral_norm(&w0, n, self.config.hw, rng::derive(psi, &[2]))?;
        if self.config.rpfan_guard && w_sn.padding == Padding::Circular {
            let exact = spectral_norm_fourier(&w_sn, self.config.hw)?;
            if exact > 1.0 {
                w_sn.kernel.scale_in_place(S::lit(1.0 / exact));
            }
            w_sn.sigma_hat = Some(S::lit(exact.min(1.0)));
        }
        Ok((rq, w_sn))
    }

    /// Fraction of point pairs whose squared distance after the raw projection (scaled by
    /// `C_in / C_out`, the usual random-projection normalization) stays within
    /// `[1 - eps, 1 + eps]` times the original squared distance.
    pub fn jl_pass_rate(&self, points: &[Tensor<S>], eps: f64, noise: &NoiseState<S>) -> Result<f64> {
        if points.len() < 2 {
            return Err(HycasError::InvalidArgument("need at least two points".into()));
        }
        let w0 = self.raw_projection(noise);
        let mixer = self.mixer_kernel();
        let scale = (self.config.cin as f64 / self.config.cout as f64).sqrt();
        let projected = points
            .iter()
            .map(|p| {
                let x = p.reshape(&[1, self.config.hw.0, self.config.hw.1, self.config.cin])?;
                Ok(w0.apply(&mixer.apply(&x)?)?.map(|v| v * S::lit(scale)))
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut pass, mut total) = (0usize, 0usize);
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let d = points[i].sub(&points[j])?.norm2().as_f64().powi(2);
                let dz = projected[i].sub(&projected[j])?.norm2().as_f64().powi(2);
                total += 1;
                if dz >= (1.0 - eps) * d && dz <= (1.0 + eps) * d {
                    pass += 1;
                }
            }
        }
        Ok(pass as f64 / total as f64)
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        if let Some(k) = &self.kernel {
            f(&format!("{prefix}.kernel"), &k.kernel);
        }
        if let Some(r) = &self.rani {
            r.visit(&format!("{prefix}.rani"), f);
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        if let Some(k) = &mut self.kernel {
            f(&format!("{prefix}.kernel"), &mut k.kernel);
        }
        if let Some(r) = &mut self.rani {
            r.visit_mut(&format!("{prefix}.rani"), f);
        }
    }

    /// Re-normalizes the trainable kernel, using the exact bound when `exact` is set and the
    /// padding allows it, otherwise `T = 5` power iteration.
    pub fn renormalize(&mut self, exact: bool) -> Result<()> {
        let hw = self.config.hw;
        if let Some(k) = &self.kernel {
            self.kernel = Some(normalize_kernel(k, hw, exact)?);
        }
        Ok(())
    }
}

/// Estimates the spectral norm and rescales.
pub fn normalize_kernel<S: Real>(k: &KernelSpec<S>, hw: (usize, usize), exact: bool) -> Result<KernelSpec<S>> {
    let sigma = if exact && k.padding == Padding::Circular && k.stride == 1 {
        spectral_norm_fourier(k, hw)?
    } else {
        spectral_norm_power_iter(k, hw, POWER_ITER_STEPS)?
    };
    let mut est = k.clone();
    est.sigma_hat = Some(S::lit(sigma));
    rescale_kernel(&est)
}
