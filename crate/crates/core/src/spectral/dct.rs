//! Orthonormal DCT-II on planes and the low-pass projection built from it.

use crate::error::{shape_err, HycasError, Result};
use crate::scalar::Real;
use crate::tensor::{nhwc, Tensor};

/// Orthonormal DCT-II matrix, `C[k, i] = a_k cos(pi (2i + 1) k / 2n)`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for k in 0..n {
        let a = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            c[k * n + i] = a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    c
}

/// `C_H X C_W^T` for a row-major `h x w` plane.
pub fn dct2<S: Real>(x: &[S], h: usize, w: usize) -> Result<Vec<S>> {
    check_plane(x, h, w)?;
    let (ch, cw) = (cast(&dct_matrix(h)), cast(&dct_matrix(w)));
    Ok(sandwich(x, &ch, &cw, h, w, false))
}

/// `C_H^T Y C_W`, the inverse of [`dct2`].
pub fn idct2<S: Real>(y: &[S], h: usize, w: usize) -> Result<Vec<S>> {
    check_plane(y, h, w)?;
    let (ch, cw) = (cast(&dct_matrix(h)), cast(&dct_matrix(w)));
    Ok(sandwich(y, &ch, &cw, h, w, true))
}

fn check_plane<S>(x: &[S], h: usize, w: usize) -> Result<()> {
    if x.len() != h * w {
        return shape_err("dct2", format!("plane of {} values is not {}x{}", x.len(), h, w));
    }
    Ok(())
}

fn cast<S: Real>(m: &[f64]) -> Vec<S> {
    m.iter().map(|&v| S::lit(v)).collect()
}

/// Forward: `A X B^T`; inverse: `A^T X B`, with `A` `h x h` and `B` `w x w`.
fn sandwich<S: Real>(x: &[S], a: &[S], b: &[S], h: usize, w: usize, inverse: bool) -> Vec<S> {
    let at = |r: usize, c: usize| if inverse { a[c * h + r] } else { a[r * h + c] };
    let bt = |r: usize, c: usize| if inverse { b[c * w + r] } else { b[r * w + c] };
    let mut tmp = vec![S::zero(); h * w];
    for r in 0..h {
        for k in 0..h {
            let coef = at(r, k);
            if coef == S::zero() {
                continue;
            }
            for c in 0..w {
                tmp[r * w + c] += coef * x[k * w + c];
            }
        }
    }
    let mut out = vec![S::zero(); h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = S::zero();
            for k in 0..w {
                acc += tmp[r * w + k] * bt(c, k);
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Binary mask over DCT coefficients keeping the lowest `ceil(rho H) x ceil(rho W)` block.
#[derive(Debug, Clone, PartialEq)]
pub struct DctMask {
    pub h: usize,
    pub w: usize,
    pub cutoff_rho: f64,
    pub keep: Vec<bool>,
}

pub fn lowpass_mask(h: usize, w: usize, cutoff_rho: f64) -> Result<DctMask> {
    if !(0.0..=1.0).contains(&cutoff_rho) {
        return Err(HycasError::InvalidArgument(format!("cutoff {} outside [0, 1]", cutoff_rho)));
    }
    let rows = ((cutoff_rho * h as f64).ceil() as usize).min(h);
    let cols = ((cutoff_rho * w as f64).ceil() as usize).min(w);
    let keep = (0..h * w).map(|i| i / w < rows && i % w < cols).collect();
    Ok(DctMask { h, w, cutoff_rho, keep })
}

impl DctMask {
    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// The self-adjoint projection `IDCT . diag(mask) . DCT` applied to every `(n, c)` plane of
/// an NHWC tensor.
#[derive(Debug, Clone)]
pub struct PlaneProjector<S> {
    h: usize,
    w: usize,
    ch: Vec<S>,
    cw: Vec<S>,
    keep: Vec<bool>,
}

impl<S: Real> PlaneProjector<S> {
    pub fn new(mask: &DctMask) -> Self {
        Self {
            h: mask.h,
            w: mask.w,
            ch: cast(&dct_matrix(mask.h)),
            cw: cast(&dct_matrix(mask.w)),
            keep: mask.keep.clone(),
        }
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn apply(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let [n, h, w, c] = nhwc(x.shape(), "project")?;
        if (h, w) != (self.h, self.w) {
            return shape_err("project", format!("plane {}x{} vs mask {}x{}", h, w, self.h, self.w));
        }
        let mut out = vec![S::zero(); x.len()];
        let mut plane = vec![S::zero(); h * w];
        for b in 0..n {
            let base = b * h * w * c;
            for ch in 0..c {
                for p in 0..h * w {
                    plane[p] = x.data()[base + p * c + ch];
                }
                let mut coef = sandwich(&plane, &self.ch, &self.cw, h, w, false);
                coef.iter_mut().zip(&self.keep).for_each(|(v, &k)| {
                    if !k {
                        *v = S::zero();
                    }
                });
                let back = sandwich(&coef, &self.ch, &self.cw, h, w, true);
                for p in 0..h * w {
                    out[base + p * c + ch] = back[p];
                }
            }
        }
        Tensor::new(x.shape(), out)
    }
}
