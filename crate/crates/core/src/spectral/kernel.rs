use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{shape_err, HycasError, Result};
use crate::rng;
use crate::scalar::Real;
use crate::tensor::kernels::{self, ConvGeom};
use crate::tensor::{nhwc, Padding, Tensor};

/// Additive guard in the rescaling denominator.
pub const EPS_GUARD: f64 = 1e-6;

/// Default number of power-iteration steps.
pub const POWER_ITER_STEPS: usize = 5;

/// Independent start vectors tried by [`spectral_norm_power_iter`].
pub const POWER_ITER_STARTS: u64 = 4;

const POWER_ITER_SEED: u64 = 0x5eed_0f_5bec;

/// A `(kh, kw, c_in, c_out)` convolution kernel with its boundary convention and the most
/// recent spectral-norm estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec<S> {
    pub kernel: Tensor<S>,
    pub padding: Padding,
    pub stride: usize,
    pub sigma_hat: Option<S>,
}

impl<S: Real> KernelSpec<S> {
    pub fn new(kernel: Tensor<S>, padding: Padding, stride: usize) -> Result<Self> {
        if kernel.shape().len() != 4 || kernel.is_empty() {
            return shape_err("kernel", format!("expected (kh,kw,cin,cout), got {:?}", kernel.shape()));
        }
        if stride == 0 {
            return Err(HycasError::InvalidArgument("kernel stride must be positive".into()));
        }
        Ok(Self { kernel, padding, stride, sigma_hat: None })
    }

    /// Circular, stride-1 kernel.
    pub fn circular(kernel: Tensor<S>) -> Result<Self> {
        Self::new(kernel, Padding::Circular, 1)
    }

    /// Seeded standard Gaussian kernel scaled by `1/sqrt(kh*kw*cin)`.
    pub fn gaussian(k: usize, cin: usize, cout: usize, padding: Padding, seed: u64) -> Self {
        let scale = 1.0 / ((k * k * cin) as f64).sqrt();
        let data = rng::gaussian_vec(&mut rng::rng_from(seed), k * k * cin * cout, scale);
        let kernel = Tensor::new(&[k, k, cin, cout], data).expect("extent product matches");
        Self { kernel, padding, stride: 1, sigma_hat: None }
    }

    pub fn dims(&self) -> [usize; 4] {
        let s = self.kernel.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn cin(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn cout(&self) -> usize {
        self.kernel.shape()[3]
    }

    pub fn geom(&self, n: usize, h: usize, w: usize) -> ConvGeom {
        let [kh, kw, cin, cout] = self.dims();
        ConvGeom { n, h, w, cin, kh, kw, cout, stride: self.stride, padding: self.padding }
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<ConvGeom> {
        let [n, h, w, c] = nhwc(x.shape(), "conv2d")?;
        if c != self.cin() {
            return shape_err("conv2d", format!("kernel expects {} input channels, input has {}", self.cin(), c));
        }
        Ok(self.geom(n, h, w))
    }

    /// Applies the convolution to an NHWC tensor without recording it.
    pub fn apply(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let g = self.check_input(x)?;
        Tensor::new(&g.out_shape(), kernels::conv2d(x.data(), self.kernel.data(), &g))
    }

    /// Adjoint of [`KernelSpec::apply`] for an input of spatial size `input_hw`.
    pub fn apply_adjoint(&self, y: &Tensor<S>, input_hw: (usize, usize)) -> Result<Tensor<S>> {
        let [n, ..] = nhwc(y.shape(), "conv2d_adjoint")?;
        let g = self.geom(n, input_hw.0, input_hw.1);
        if y.shape() != g.out_shape() {
            return shape_err("conv2d_adjoint", format!("{:?} vs expected {:?}", y.shape(), g.out_shape()));
        }
        Tensor::new(&[n, input_hw.0, input_hw.1, self.cin()], kernels::conv2d_adjoint(y.data(), self.kernel.data(), &g))
    }

    /// True when the stored estimate certifies a non-expansive operator.
    pub fn is_normalized(&self) -> bool {
        self.sigma_hat.is_some_and(|s| s.as_f64() <= 1.0 + EPS_GUARD)
    }
}

/// Exact operator norm of a circular stride-1 convolution on an `H x W` grid: the largest
/// singular value of the per-frequency transfer matrix, maximized over all frequencies.
pub fn spectral_norm_fourier<S: Real>(k: &KernelSpec<S>, input_hw: (usize, usize)) -> Result<f64> {
    if k.padding != Padding::Circular {
        return Err(HycasError::InvalidArgument(
            "the Fourier bound only holds for circular padding".into(),
        ));
    }
    if k.stride != 1 {
        return Err(HycasError::InvalidArgument("the Fourier bound requires stride 1".into()));
    }
    let [kh, kw, cin, cout] = k.dims();
    let (h, w) = input_hw;
    if h < kh || w < kw {
        return shape_err("spectral_norm_fourier", format!("grid {}x{} smaller than kernel {}x{}", h, w, kh, kw));
    }
    let taps = k.kernel.to_f64_vec();
    let tau = std::f64::consts::TAU;
    let mut best = 0.0f64;
    let mut m = DMatrix::<Complex64>::zeros(cout, cin);
    for u in 0..h {
        for v in 0..w {
            m.fill(Complex64::new(0.0, 0.0));
            for a in 0..kh {
                for b in 0..kw {
                    let phase = Complex64::from_polar(1.0, tau * ((u * a) as f64 / h as f64 + (v * b) as f64 / w as f64));
                    let base = (a * kw + b) * cin * cout;
                    for ci in 0..cin {
                        for co in 0..cout {
                            m[(co, ci)] += phase * taps[base + ci * cout + co];
                        }
                    }
                }
            }
            let top = m.clone().singular_values().max();
            best = best.max(top);
        }
    }
    Ok(best)
}

/// `T`-step power iteration from [`POWER_ITER_STARTS`] seeded start vectors, keeping the
/// largest estimate. Each run is a lower bound, so the maximum is too; a single start lands
/// close to a near-degenerate second singular value often enough to miss by a few percent.
pub fn spectral_norm_power_iter<S: Real>(k: &KernelSpec<S>, input_hw: (usize, usize), steps: usize) -> Result<f64> {
    let mut best = 0.0f64;
    for s in 0..POWER_ITER_STARTS {
        best = best.max(spectral_norm_power_iter_seeded(k, input_hw, steps, rng::derive(POWER_ITER_SEED, &[s]))?);
    }
    Ok(best)
}

/// Alternates `u = Kv/|Kv|`, `v = K^T u/|K^T u|` for `steps` rounds and returns `<u, K v>`.
/// The estimate never decreases as `steps` grows for a fixed start vector.
pub fn spectral_norm_power_iter_seeded<S: Real>(
    k: &KernelSpec<S>,
    input_hw: (usize, usize),
    steps: usize,
    seed: u64,
) -> Result<f64> {
    if steps == 0 {
        return Err(HycasError::InvalidArgument("power iteration needs at least one step".into()));
    }
    let kf: KernelSpec<f64> = KernelSpec { kernel: k.kernel.cast(), padding: k.padding, stride: k.stride, sigma_hat: None };
    let g = kf.geom(1, input_hw.0, input_hw.1);
    let mut v = rng::gaussian_vec::<f64>(&mut rng::rng_from(seed), g.in_len(), 1.0);
    if !normalize(&mut v) {
        return Ok(0.0);
    }
    let kd = kf.kernel.data();
    let mut sigma = 0.0;
    for _ in 0..steps {
        let mut u = kernels::conv2d(&v, kd, &g);
        if !normalize(&mut u) {
            return Ok(0.0);
        }
        v = kernels::conv2d_adjoint(&u, kd, &g);
        // <u, K v> = <K^T u, v> = |K^T u| once v is normalized.
        sigma = kernels::norm2(&v);
        if !normalize(&mut v) {
            return Ok(0.0);
        }
    }
    Ok(sigma)
}

fn normalize(v: &mut [f64]) -> bool {
    let n = kernels::norm2(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Divides the kernel by `max(sigma_hat, 1) + EPS_GUARD` and updates the stored estimate.
pub fn rescale_kernel<S: Real>(k: &KernelSpec<S>) -> Result<KernelSpec<S>> {
    let sigma = k
        .sigma_hat
        .ok_or_else(|| HycasError::InvalidArgument("rescale_kernel needs a spectral-norm estimate".into()))?;
    let denom = sigma.max(S::one()) + S::lit(EPS_GUARD);
    let mut out = k.clone();
    out.kernel.scale_in_place(S::one() / denom);
    out.sigma_hat = Some(sigma / denom);
    Ok(out)
}

/// Spectral normalization of a random-projection kernel against a batch of `n` inputs.
///
/// Draws a Gaussian `u` shaped like the convolution output, performs two adjoint/forward
/// updates normalizing every sample on its own, and averages the per-sample Rayleigh
/// quotients. Returns `(RQ, W0 / max(RQ, 1))`.
pub fn batch_aware_spectral_norm<S: Real>(
    w0: &KernelSpec<S>,
    n: usize,
    input_hw: (usize, usize),
    seed: u64,
) -> Result<(f64, KernelSpec<S>)> {
    if n == 0 {
        return Err(HycasError::InvalidArgument("batch-aware normalization needs N >= 1".into()));
    }
    let kf: Vec<f64> = w0.kernel.to_f64_vec();
    let g = w0.geom(n, input_hw.0, input_hw.1);
    let per_in = g.in_len() / n;
    let per_out = g.out_len() / n;
    let mut u = rng::gaussian_vec::<f64>(&mut rng::rng_from(seed), g.out_len(), 1.0);
    let mut v = vec![0.0; g.in_len()];
    for _ in 0..2 {
        v = kernels::conv2d_adjoint(&u, &kf, &g);
        v.chunks_exact_mut(per_in).for_each(|c| {
            normalize(c);
        });
        u = kernels::conv2d(&v, &kf, &g);
        u.chunks_exact_mut(per_out).for_each(|c| {
            normalize(c);
        });
    }
    let kv = kernels::conv2d(&v, &kf, &g);
    let rq = u
        .chunks_exact(per_out)
        .zip(kv.chunks_exact(per_out))
        .map(|(a, b)| kernels::dot(a, b))
        .sum::<f64>()
        / n as f64;
    let mut out = w0.clone();
    let denom = rq.max(1.0);
    out.kernel.scale_in_place(S::lit(1.0 / denom));
    out.sigma_hat = Some(S::lit(rq / denom));
    Ok((rq, out))
}
