#![allow(dead_code)]

use std::sync::Arc;

use hycas::model::{Classifier, Differentiable};
use hycas::spectral::{lowpass_mask, PlaneProjector};
use hycas::streams::NoiseState;
use hycas::tensor::{Gradients, Graph, Reduction, Tensor, Var};
use hycas::Padding;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Box-Muller, kept independent of the crate's sampler
    (0..n)
        .map(|_| {
            let u1: f64 = r.random::<f64>().max(1e-300);
            let u2: f64 = r.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

pub fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n = shape.iter().product();
    tensor(shape, gaussian(&mut rng(seed), n))
}

/// Dense matrix of a stride-1 convolution, built straight from the tap formula: output
/// `(i, j, co)` reads input `(i + a - pad, j + b - pad, ci)` with weight `K[a, b, ci, co]`.
pub fn conv_matrix(k: &[f64], dims: [usize; 4], h: usize, w: usize, padding: Padding) -> DMatrix<f64> {
    let [kh, kw, cin, cout] = dims;
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut m = DMatrix::zeros(h * w * cout, h * w * cin);
    for i in 0..h {
        for j in 0..w {
            for a in 0..kh {
                for b in 0..kw {
                    let si = i as isize + a as isize - ph as isize;
                    let sj = j as isize + b as isize - pw as isize;
                    let (si, sj) = match padding {
                        Padding::Circular => (si.rem_euclid(h as isize) as usize, sj.rem_euclid(w as isize) as usize),
                        Padding::Zero => {
                            if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                continue;
                            }
                            (si as usize, sj as usize)
                        }
                    };
                    for ci in 0..cin {
                        for co in 0..cout {
                            m[((i * w + j) * cout + co, (si * w + sj) * cin + ci)] +=
                                k[((a * kw + b) * cin + ci) * cout + co];
                        }
                    }
                }
            }
        }
    }
    m
}

pub fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// `logits = W x + b` with no internal randomness.
pub struct Linear {
    pub shape: [usize; 3],
    /// `(K, d)` row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub k: usize,
}

impl Linear {
    /// Two classes split by the sign of the first input coordinate, with logit gap `2 * gain * x0`.
    pub fn halfspace(shape: [usize; 3], gain: f64) -> Self {
        let d: usize = shape.iter().product();
        let mut w = vec![0.0; 2 * d];
        w[0] = -gain;
        w[d] = gain;
        Self { shape, w, b: vec![0.0; 2], k: 2 }
    }

    pub fn constant(shape: [usize; 3], logits: Vec<f64>) -> Self {
        let d: usize = shape.iter().product();
        let k = logits.len();
        Self { shape, w: vec![0.0; k * d], b: logits, k }
    }

    fn d(&self) -> usize {
        self.shape.iter().product()
    }
}

impl Classifier<f64> for Linear {
    type Draw = ();

    fn num_classes(&self) -> usize {
        self.k
    }

    fn input_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn draw(&self, _: &NoiseState<f64>) -> hycas::Result<()> {
        Ok(())
    }

    fn logits_drawn(&self, x: &Tensor<f64>, _: &()) -> hycas::Result<Tensor<f64>> {
        let d = self.d();
        let n = x.len() / d;
        let mut out = Vec::with_capacity(n * self.k);
        for row in x.data().chunks_exact(d) {
            for c in 0..self.k {
                out.push(self.b[c] + row.iter().zip(&self.w[c * d..(c + 1) * d]).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        Tensor::new(&[n, self.k], out)
    }
}

impl Differentiable<f64> for Linear {
    fn loss_grad_drawn(&self, x: &Tensor<f64>, y: &[usize], draw: &()) -> hycas::Result<(Vec<f64>, Tensor<f64>)> {
        let d = self.d();
        let z = self.logits_drawn(x, draw)?;
        let mut losses = Vec::new();
        let mut grad = vec![0.0; x.len()];
        for (n, row) in z.data().chunks_exact(self.k).enumerate() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
            losses.push(m + s.ln() - row[y[n]]);
            for c in 0..self.k {
                let p = (row[c] - m).exp() / s - if c == y[n] { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[n * d + j] += p * self.w[c * d + j];
                }
            }
        }
        Ok((losses, Tensor::new(x.shape(), grad)?))
    }
}

/// Something with named parameters that a finite-difference check can perturb.
pub trait Params: Clone {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<f64>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>));
}

impl Params for hycas::block::HycasNetwork<f64> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        self.visit_params(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        self.visit_params_mut(f)
    }
}

impl Params for hycas::streams::Stream<f64> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        self.visit_params("s", f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        self.visit_params_mut("s", f)
    }
}

/// Plain named tensors, for checking single primitives.
#[derive(Clone)]
pub struct Named(pub Vec<(String, Tensor<f64>)>);

impl Params for Named {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        for (n, t) in &self.0 {
            f(n, t);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        for (n, t) in &mut self.0 {
            f(n, t);
        }
    }
}

pub struct FdReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

/// Compares analytic parameter gradients with central differences (step `1e-5`) on `coords`
/// distinct randomly chosen coordinates. The error is relative to the larger magnitude, or absolute
/// when both are below `1e-6`.
pub fn fd_check<M: Params>(
    model: &M,
    loss: &dyn Fn(&M) -> (f64, hycas::tensor::Gradients<f64>),
    coords: usize,
    seed: u64,
) -> FdReport {
    let (_, grads) = loss(model);
    let mut slots = Vec::new();
    model.visit(&mut |name, t| {
        for i in 0..t.len() {
            slots.push((name.to_string(), i));
        }
    });
    slots.shuffle(&mut rng(seed));
    let h = 1e-5;
    let mut rep = FdReport { checked: 0, worst: 0.0, worst_at: String::new() };
    for (name, i) in slots.into_iter().take(coords) {
        let analytic = grads.param(&name).map_or(0.0, |g| g[i]);
        let shifted = |delta: f64| {
            let mut m = model.clone();
            m.visit_mut(&mut |n, t| {
                if n == name {
                    t.data_mut()[i] += delta;
                }
            });
            loss(&m).0
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        let err = if scale < 1e-6 { (analytic - numeric).abs() } else { (analytic - numeric).abs() / scale };
        rep.checked += 1;
        if err > rep.worst {
            rep.worst = err;
            rep.worst_at = format!("{name}[{i}]: analytic {analytic:e}, numeric {numeric:e}");
        }
    }
    rep
}

/// `P[Bin(n, p) >= m]` from summed log-pmf terms.
pub fn binomial_upper_tail(m: u64, n: u64, p: f64) -> f64 {
    let mut ln_fact = vec![0.0f64; n as usize + 1];
    for k in 1..=n as usize {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    (m..=n)
        .map(|k| {
            let (k, nn) = (k as usize, n as usize);
            (ln_fact[nn] - ln_fact[k] - ln_fact[nn - k] + k as f64 * p.ln() + (nn - k) as f64 * (-p).ln_1p()).exp()
        })
        .sum()
}

/// Solves `P[Bin(n, p) >= m] = alpha` for `p` by bisection; the tail increases with `p`.
pub fn cp_oracle(m: u64, n: u64, alpha: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if binomial_upper_tail(m, n, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `Phi^{-1}(p)` by bisection on a composite Simpson integral of the standard normal density.
pub fn quantile_oracle(p: f64) -> f64 {
    let cdf = |x: f64| {
        let steps = 20_000;
        let h = x / steps as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(0.0) + f(x);
        for i in 1..steps {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        0.5 + s * h / 3.0
    };
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub type Op = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> hycas::Result<Var>>;

/// `sum(op(params) * r)` for a fixed random `r`, with its gradients.
pub fn weighted_loss(op: &Op) -> impl Fn(&Named) -> (f64, Gradients<f64>) + '_ {
    move |m: &Named| {
        let mut g = Graph::new();
        let vars: Vec<Var> = m.0.iter().map(|(n, t)| g.param(n, t)).collect();
        let out = op(&mut g, &vars).unwrap();
        let r = random_tensor(g.shape(out), 99);
        let rv = g.constant(r);
        let prod = g.hadamard(out, rv).unwrap();
        let l = g.sum(prod).unwrap();
        (g.value(l).data()[0], g.backward(l).unwrap())
    }
}

pub fn named(items: &[(&str, &[usize], u64)]) -> Named {
    Named(items.iter().map(|(n, s, seed)| (n.to_string(), random_tensor(s, *seed))).collect())
}

pub fn primitive_cases() -> Vec<(&'static str, Named, Op)> {
    let proj = Arc::new(PlaneProjector::new(&lowpass_mask(8, 8, 0.5).unwrap()));
    vec![
        (
            "conv2d circular",
            named(&[("x", &[2, 5, 4, 2], 1), ("k", &[3, 3, 2, 3], 2)]),
            Box::new(|g: &mut Graph<f64>, v: &[Var]| g.conv2d(v[0], v[1], Padding::Circular, 1)),
        ),
        (
            "conv2d zero stride 2",
            named(&[("x", &[1, 5, 5, 2], 3), ("k", &[3, 3, 2, 2], 4)]),
            Box::new(|g: &mut Graph<f64>, v: &[Var]| g.conv2d(v[0], v[1], Padding::Zero, 2)),
        ),
        (
            "dense",
            named(&[("x", &[3, 5], 5), ("w", &[4, 5], 6), ("b", &[4], 7)]),
            Box::new(|g: &mut Graph<f64>, v: &[Var]| g.dense(v[0], v[1], v[2])),
        ),
        ("relu", named(&[("x", &[2, 3, 3, 2], 8)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.relu(v[0]))),
        ("sigmoid", named(&[("x", &[2, 3, 3, 2], 9)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.sigmoid(v[0]))),
        ("groupsort2", named(&[("x", &[2, 3, 3, 4], 10)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.groupsort2(v[0]))),
        (
            "clamp01",
            named(&[("x", &[2, 3, 3, 2], 11)]),
            Box::new(|g: &mut Graph<f64>, v: &[Var]| {
                let s = g.scale(v[0], 0.6)?;
                g.clamp01(s)
            }),
        ),
        ("exp", named(&[("x", &[4, 5], 12)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.exp(v[0]))),
        ("add", named(&[("a", &[3, 4], 13), ("b", &[3, 4], 14)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.add(v[0], v[1]))),
        ("sub", named(&[("a", &[3, 4], 15), ("b", &[3, 4], 16)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.sub(v[0], v[1]))),
        (
            "hadamard",
            named(&[("a", &[3, 4], 17), ("b", &[3, 4], 18)]),
            Box::new(|g: &mut Graph<f64>, v: &[Var]| g.hadamard(v[0], v[1])),
        ),
        ("scale", named(&[("x", &[4, 5], 19)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.scale(v[0], -1.7))),
        (
            "scale_by",
            named(&[("x", &[4, 5], 20), ("s", &[1], 21)]),
            Box::new(|g: &mut Graph<f64>, v: &[Var]| g.scale_by(v[0], v[1])),
        ),
        ("expand", named(&[("x", &[4, 5], 22)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.expand(v[0], &[2]))),
        ("reshape", named(&[("x", &[4, 6], 23)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.reshape(v[0], &[6, 4]))),
        ("gap", named(&[("x", &[2, 3, 3, 2], 24)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.gap(v[0]))),
        ("sum", named(&[("x", &[4, 5], 25)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.sum(v[0]))),
        ("mean", named(&[("x", &[4, 5], 26)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.mean(v[0]))),
        (
            "softmax_ce mean",
            named(&[("z", &[7, 3], 27)]),
            Box::new(|g: &mut Graph<f64>, v: &[Var]| g.softmax_ce(v[0], &[0, 2, 1, 1, 0, 2, 2], Reduction::Mean)),
        ),
        (
            "softmax_ce sum",
            named(&[("z", &[7, 3], 28)]),
            Box::new(|g: &mut Graph<f64>, v: &[Var]| g.softmax_ce(v[0], &[2, 2, 0, 1, 1, 0, 2], Reduction::Sum)),
        ),
        ("softmax_axis0", named(&[("x", &[4, 5], 29)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.softmax_axis0(v[0]))),
        ("row", named(&[("x", &[4, 5], 30)]), Box::new(|g: &mut Graph<f64>, v: &[Var]| g.row(v[0], 1))),
        (
            "project",
            named(&[("x", &[2, 8, 8, 2], 31)]),
            Box::new(move |g: &mut Graph<f64>, v: &[Var]| g.project(v[0], proj.clone())),
        ),
    ]
}

/// `pairs` input pairs stacked as two batches; separations range over 1 to 1e-3.
pub fn pairs(shape: [usize; 3], pairs: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let per: usize = shape.iter().product();
    let mut r = rng(seed);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..pairs {
        let x: Vec<f64> = (0..per).map(|_| r.random::<f64>()).collect();
        let d = gaussian(&mut r, per);
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = [1.0, 0.1, 0.01, 0.001][i % 4] / n;
        b.extend(x.iter().zip(&d).map(|(x, d)| x + s * d));
        a.extend(x);
    }
    let dims = [pairs, shape[0], shape[1], shape[2]];
    (tensor(&dims, a), tensor(&dims, b))
}

pub fn worst_ratio(fa: &Tensor<f64>, fb: &Tensor<f64>, a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let n = a.shape()[0];
    let (pi, po) = (a.len() / n, fa.len() / n);
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    (0..n)
        .map(|i| {
            dist(&fa.data()[i * po..(i + 1) * po], &fb.data()[i * po..(i + 1) * po])
                / dist(&a.data()[i * pi..(i + 1) * pi], &b.data()[i * pi..(i + 1) * pi])
        })
        .fold(0.0, f64::max)
}

/// Finite-difference check of every trainable parameter of one stream, with its masks on the tape.
pub fn stream_fd(kind: hycas::streams::StreamKind, seed: u64, coords: usize) -> FdReport {
    use hycas::streams::{Stream, StreamConfig, StreamSource};
    let s = Stream::<f64>::new(kind, StreamConfig::new(3, 2, 4, (6, 6)), seed).unwrap();
    let x = random_tensor(&[2, 6, 6, 2], seed + 1);
    let r = random_tensor(&[2, 6, 6, 4], seed + 2);
    let noise = NoiseState::derive(seed, 0);
    let loss = |m: &Stream<f64>| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = m.forward_node(&mut g, xv, StreamSource::Live(&noise), "s").unwrap();
        let rv = g.constant(r.clone());
        let prod = g.hadamard(out, rv).unwrap();
        let l = g.sum(prod).unwrap();
        (g.value(l).data()[0], g.backward(l).unwrap())
    };
    fd_check(&s, &loss, coords, seed)
}
