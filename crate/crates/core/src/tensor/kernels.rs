//! Allocation-light numeric routines shared by the tape, the spectral toolbox and the
//! streams. Convolutions are cross-correlations in NHWC layout with kernels stored as
//! `(kh, kw, c_in, c_out)`; tap `(a, b)` reads input row `i*stride + a - (kh-1)/2`.

use crate::scalar::Real;

use super::Padding;

/// Geometry of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (self.h.div_ceil(self.stride), self.w.div_ceil(self.stride))
    }

    pub fn out_shape(&self) -> [usize; 4] {
        let (oh, ow) = self.out_hw();
        [self.n, oh, ow, self.cout]
    }

    pub fn in_len(&self) -> usize {
        self.n * self.h * self.w * self.cin
    }

    pub fn out_len(&self) -> usize {
        let (oh, ow) = self.out_hw();
        self.n * oh * ow * self.cout
    }

    #[inline]
    fn src(&self, o: usize, tap: usize, extent: usize, k: usize) -> Option<usize> {
        let pad = (k - 1) / 2;
        let pos = (o * self.stride + tap) as isize - pad as isize;
        match self.padding {
            Padding::Circular => Some(pos.rem_euclid(extent as isize) as usize),
            Padding::Zero => (pos >= 0 && (pos as usize) < extent).then_some(pos as usize),
        }
    }

    /// Calls `f(out_pixel_offset, in_pixel_offset, tap_index)` for every contributing tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = self.out_hw();
        for n in 0..self.n {
            for oi in 0..oh {
                for a in 0..self.kh {
                    let Some(si) = self.src(oi, a, self.h, self.kh) else { continue };
                    for oj in 0..ow {
                        let out_px = ((n * oh + oi) * ow + oj) * self.cout;
                        for b in 0..self.kw {
                            let Some(sj) = self.src(oj, b, self.w, self.kw) else { continue };
                            let in_px = ((n * self.h + si) * self.w + sj) * self.cin;
                            f(out_px, in_px, a * self.kw + b);
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d<S: Real>(x: &[S], k: &[S], g: &ConvGeom) -> Vec<S> {
    debug_assert_eq!(x.len(), g.in_len());
    let mut out = vec![S::zero(); g.out_len()];
    let (cin, cout) = (g.cin, g.cout);
    g.for_each_tap(|op, ip, t| {
        let kt = &k[t * cin * cout..(t + 1) * cin * cout];
        let o = &mut out[op..op + cout];
        for ci in 0..cin {
            let xv = x[ip + ci];
            if xv == S::zero() {
                continue;
            }
            let row = &kt[ci * cout..(ci + 1) * cout];
            for (ov, &kv) in o.iter_mut().zip(row) {
                *ov += xv * kv;
            }
        }
    });
    out
}

/// Adjoint of [`conv2d`] in its input argument (transposed convolution).
pub fn conv2d_adjoint<S: Real>(gout: &[S], k: &[S], g: &ConvGeom) -> Vec<S> {
    debug_assert_eq!(gout.len(), g.out_len());
    let mut gx = vec![S::zero(); g.in_len()];
    let (cin, cout) = (g.cin, g.cout);
    g.for_each_tap(|op, ip, t| {
        let kt = &k[t * cin * cout..(t + 1) * cin * cout];
        let go = &gout[op..op + cout];
        for ci in 0..cin {
            let row = &kt[ci * cout..(ci + 1) * cout];
            gx[ip + ci] += dot(go, row);
        }
    });
    gx
}

/// Gradient of `<gout, conv2d(x, k)>` with respect to `k`.
pub fn conv2d_kernel_grad<S: Real>(gout: &[S], x: &[S], g: &ConvGeom) -> Vec<S> {
    let (cin, cout) = (g.cin, g.cout);
    let mut gk = vec![S::zero(); g.kh * g.kw * cin * cout];
    g.for_each_tap(|op, ip, t| {
        let go = &gout[op..op + cout];
        let kt = &mut gk[t * cin * cout..(t + 1) * cin * cout];
        for ci in 0..cin {
            let xv = x[ip + ci];
            for (kv, &gv) in kt[ci * cout..(ci + 1) * cout].iter_mut().zip(go) {
                *kv += xv * gv;
            }
        }
    });
    gk
}

/// `y = x W^T + b` for `x: (n, f)`, `W: (o, f)`, `b: (o)`.
pub fn dense<S: Real>(x: &[S], w: &[S], b: &[S], n: usize, f: usize, o: usize) -> Vec<S> {
    let mut y = vec![S::zero(); n * o];
    for r in 0..n {
        let xr = &x[r * f..(r + 1) * f];
        for j in 0..o {
            y[r * o + j] = dot(xr, &w[j * f..(j + 1) * f]) + b[j];
        }
    }
    y
}

#[inline]
pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm2<S: Real>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

pub fn argmax<S: Real>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Top two values `(largest, runner_up)` with the index of the largest.
pub fn top_two<S: Real>(v: &[S]) -> (usize, S, S) {
    let top = argmax(v);
    let second = v
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &x)| x)
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    (top, v[top], second)
}
