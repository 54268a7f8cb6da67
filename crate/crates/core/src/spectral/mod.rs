//! Deterministic 1-Lipschitz building blocks: spectral-norm estimation and rescaling of
//! convolution kernels, orthogonal channel mixers, and the orthonormal 2-D DCT.

pub mod dct;
mod kernel;
mod mixer;

pub use dct::{dct2, idct2, lowpass_mask, DctMask, PlaneProjector};
pub use kernel::{
    batch_aware_spectral_norm, rescale_kernel, spectral_norm_fourier, spectral_norm_power_iter,
    spectral_norm_power_iter_seeded, KernelSpec, EPS_GUARD, POWER_ITER_STARTS,
    POWER_ITER_STEPS,
};
pub use mixer::{make_orthogonal_mixer, OrthoMixer};
