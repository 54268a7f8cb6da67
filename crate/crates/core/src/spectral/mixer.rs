use nalgebra::DMatrix;

use crate::error::{HycasError, Result};
use crate::rng;
use crate::scalar::Real;
use crate::tensor::{Padding, Tensor};

use super::KernelSpec;

/// Frozen orthogonal `C x C` channel mixer.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoMixer {
    /// Row-major `U[out, in]`.
    pub u: Vec<f64>,
    pub channels: usize,
    pub seed: u64,
}

/// Orthogonalizes a seeded Gaussian matrix with QR, fixing signs so that `R` has a positive
/// diagonal (the result is then unique for a given seed).
pub fn make_orthogonal_mixer(channels: usize, seed: u64) -> Result<OrthoMixer> {
    if channels == 0 {
        return Err(HycasError::InvalidArgument("mixer needs at least one channel".into()));
    }
    let g: Vec<f64> = rng::gaussian_vec(&mut rng::rng_from(seed), channels * channels, 1.0);
    let qr = DMatrix::from_row_slice(channels, channels, &g).qr();
    let (mut q, r) = qr.unpack();
    for j in 0..channels {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut u = Vec::with_capacity(channels * channels);
    for i in 0..channels {
        for j in 0..channels {
            u.push(q[(i, j)]);
        }
    }
    Ok(OrthoMixer { u, channels, seed })
}

impl OrthoMixer {
    pub fn identity(channels: usize) -> Self {
        let mut u = vec![0.0; channels * channels];
        (0..channels).for_each(|i| u[i * channels + i] = 1.0);
        Self { u, channels, seed: 0 }
    }

    /// `U` as a 1x1 kernel, `K[0,0,ci,co] = U[co,ci]`.
    pub fn kernel<S: Real>(&self) -> KernelSpec<S> {
        self.kernel_of(false)
    }

    /// `U^T` as a 1x1 kernel; undoes [`OrthoMixer::kernel`].
    pub fn inverse_kernel<S: Real>(&self) -> KernelSpec<S> {
        self.kernel_of(true)
    }

    fn kernel_of<S: Real>(&self, transpose: bool) -> KernelSpec<S> {
        let c = self.channels;
        let mut data = vec![S::zero(); c * c];
        for co in 0..c {
            for ci in 0..c {
                let v = if transpose { self.u[ci * c + co] } else { self.u[co * c + ci] };
                data[ci * c + co] = S::lit(v);
            }
        }
        let t = Tensor::new(&[1, 1, c, c], data).expect("c*c entries");
        let mut k = KernelSpec::new(t, Padding::Circular, 1).expect("valid 1x1 kernel");
        k.sigma_hat = Some(S::one());
        k
    }

    /// Mixes channels of an NHWC tensor.
    pub fn apply<S: Real>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.kernel().apply(x)
    }

    pub fn apply_inverse<S: Real>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.inverse_kernel().apply(x)
    }

    /// `|U^T U - I|_F`.
    pub fn orthogonality_defect(&self) -> f64 {
        let c = self.channels;
        let mut acc = 0.0;
        for i in 0..c {
            for j in 0..c {
                let dot: f64 = (0..c).map(|k| self.u[k * c + i] * self.u[k * c + j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                acc += (dot - target).powi(2);
            }
        }
        acc.sqrt()
    }
}
