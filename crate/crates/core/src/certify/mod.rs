//! Dual certification: Lipschitz-margin certificates on logits and randomized-smoothing
//! certificates with exact binomial bounds.

pub mod stats;

use rayon::prelude::*;

use crate::error::{HycasError, Result};
use crate::model::Classifier;
use crate::rng;
use crate::scalar::Real;
use crate::streams::NoiseState;
use crate::tensor::{kernels, Tensor};

pub use stats::{clopper_pearson_lower, gauss_cdf, inv_gauss_cdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rs,
    LipMargin,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rs => "rs",
            Method::LipMargin => "lip",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub label: usize,
    pub radius_l2: f64,
    pub radius_linf: f64,
    pub method: Method,
    pub abstain: bool,
    pub confidence: f64,
}

impl Certificate {
    fn new(label: usize, radius_l2: f64, dim: usize, method: Method, confidence: f64) -> Self {
        let abstain = !(radius_l2 > 0.0);
        let r = if abstain { 0.0 } else { radius_l2 };
        Self { label, radius_l2: r, radius_linf: r / (dim as f64).sqrt(), method, abstain, confidence }
    }

    /// True when the certificate covers `label` at ℓ2 radius `r`.
    pub fn certifies(&self, label: usize, r: f64) -> bool {
        !self.abstain && self.label == label && self.radius_l2 >= r
    }
}

/// How the margin branch treats internal randomness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LipMode {
    /// Logits at one frozen noise state.
    Frozen,
    /// One-sided confidence bounds on logits averaged over `samples` noise states.
    ExpectedLcb { samples: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
    pub sigma: f64,
    pub lip_mode: LipMode,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n0: 100, n: 100_000, alpha: 0.001, sigma: 0.25, lip_mode: LipMode::Frozen }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n0 < 1 || self.n < self.n0 {
            return Err(HycasError::InvalidArgument(format!("need 1 <= n0 <= n, got n0={}, n={}", self.n0, self.n)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(HycasError::InvalidArgument(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(HycasError::InvalidArgument(format!("sigma {} must be finite and >= 0", self.sigma)));
        }
        if let LipMode::ExpectedLcb { samples } = self.lip_mode {
            if samples < 2 {
                return Err(HycasError::InvalidArgument("expected-logit bounds need >= 2 samples".into()));
            }
        }
        Ok(())
    }
}

/// Both branch certificates and the one selected.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    pub rs: Certificate,
    pub lip: Certificate,
    pub chosen: Certificate,
}

/// `r2 = (top - second) / 4`, `r_inf = r2 / sqrt(d)`; abstains when the gap is not positive.
pub fn margin_certificate(logits: &[f64], dim: usize) -> Result<Certificate> {
    if logits.len() < 2 {
        return Err(HycasError::InvalidArgument("margin certificate needs at least two classes".into()));
    }
    let (label, top, second) = kernels::top_two(logits);
    Ok(Certificate::new(label, (top - second) / 4.0, dim, Method::LipMargin, 1.0))
}

/// Distributional assumption behind [`margin_certificate_lcb`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundMode {
    StudentT,
    /// Distribution-free bound for logits clamped to `[lo, hi]`.
    Hoeffding { lo: f64, hi: f64 },
}

/// Margin certificate from one-sided confidence bounds on mean logits.
///
/// `samples` holds one logit vector per draw. The top class is the one with the largest
/// sample mean; its lower bound is compared with the largest upper bound over all other
/// classes. Each of the `K` bounds is taken at level `alpha / K` so that all hold jointly
/// with probability at least `1 - alpha`.
pub fn margin_certificate_lcb(samples: &[Vec<f64>], alpha: f64, dim: usize, mode: BoundMode) -> Result<Certificate> {
    if samples.len() < 2 {
        return Err(HycasError::InvalidArgument("confidence bounds need at least two samples".into()));
    }
    let k = samples[0].len();
    if k < 2 || samples.iter().any(|s| s.len() != k) {
        return Err(HycasError::InvalidArgument("samples must share at least two classes".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HycasError::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let m = samples.len() as f64;
    let clamp = |v: f64| match mode {
        BoundMode::Hoeffding { lo, hi } => v.clamp(lo, hi),
        BoundMode::StudentT => v,
    };
    let mean: Vec<f64> = (0..k).map(|c| samples.iter().map(|s| clamp(s[c])).sum::<f64>() / m).collect();
    let per = alpha / k as f64;
    let half_width: Vec<f64> = match mode {
        BoundMode::StudentT => {
            let t = stats::student_t_quantile(1.0 - per, m - 1.0)?;
            (0..k)
                .map(|c| {
                    let var = samples.iter().map(|s| (s[c] - mean[c]).powi(2)).sum::<f64>() / (m - 1.0);
                    t * (var / m).sqrt()
                })
                .collect()
        }
        BoundMode::Hoeffding { lo, hi } => {
            let w = (hi - lo) * ((1.0 / per).ln() / (2.0 * m)).sqrt();
            vec![w; k]
        }
    };
    let label = kernels::argmax(&mean);
    let lcb = mean[label] - half_width[label];
    let ucb = (0..k).filter(|&c| c != label).map(|c| mean[c] + half_width[c]).fold(f64::NEG_INFINITY, f64::max);
    Ok(Certificate::new(label, (lcb - ucb) / 4.0, dim, Method::LipMargin, 1.0 - alpha))
}

/// Mean logits over `samples` noise states `NoiseState::derive(seed, i)`, without input noise.
pub fn expected_logits<S: Real, C: Classifier<S>>(net: &C, x: &Tensor<S>, samples: usize, seed: u64) -> Result<Tensor<S>> {
    if samples == 0 {
        return Err(HycasError::InvalidArgument("need at least one sample".into()));
    }
    let mut acc = vec![0.0f64; x.shape()[0] * net.num_classes()];
    for i in 0..samples {
        let z = net.logits(x, &NoiseState::derive(seed, i as u64))?;
        // running mean: identical samples reproduce themselves exactly
        let w = 1.0 / (i + 1) as f64;
        acc.iter_mut().zip(z.data()).for_each(|(a, v)| *a += (v.as_f64() - *a) * w);
    }
    let data = acc.iter().map(|&a| S::lit(a)).collect();
    Tensor::new(&[x.shape()[0], net.num_classes()], data)
}

/// Input-noise seed of draw `i` for the point with identifier `id`.
fn epsilon_seed(seed: u64, id: u64, draw: u64) -> u64 {
    rng::derive(seed, &[rng::tag("epsilon"), id, draw])
}

/// Adds draw `i`'s Gaussian noise to every point of the batch.
fn noisy_batch<S: Real>(xs: &Tensor<S>, ids: &[u64], sigma: f64, seed: u64, draw: u64) -> Tensor<S> {
    let per = xs.len() / ids.len().max(1);
    let mut out = xs.clone();
    if sigma > 0.0 {
        for (chunk, &id) in out.data_mut().chunks_exact_mut(per).zip(ids) {
            let e: Vec<S> = rng::gaussian_vec(&mut rng::rng_from(epsilon_seed(seed, id, draw)), per, sigma);
            chunk.iter_mut().zip(e).for_each(|(v, n)| *v += n);
        }
    }
    out
}

/// Class counts of the noisy classifier over draws `draws` for every point of a batch.
///
/// Draw `i` uses the internal noise `NoiseState::derive(seed, i)` (shared by all points) and
/// a per-point input draw keyed by `(seed, id, i)`, so results do not depend on batching or
/// on the number of worker threads.
pub fn class_counts<S: Real, C: Classifier<S>>(
    net: &C,
    xs: &Tensor<S>,
    ids: &[u64],
    sigma: f64,
    seed: u64,
    draws: std::ops::Range<u64>,
) -> Result<Vec<Vec<u64>>> {
    let k = net.num_classes();
    let p = ids.len();
    if xs.shape().first() != Some(&p) {
        return Err(HycasError::InvalidArgument(format!("{} ids for batch {:?}", p, xs.shape())));
    }
    let empty = vec![vec![0u64; k]; p];
    if p == 0 {
        return Ok(empty);
    }
    draws
        .into_par_iter()
        .map(|i| -> Result<Vec<Vec<u64>>> {
            let draw = net.draw(&NoiseState::derive(seed, i))?;
            let preds = net.predict_drawn(&noisy_batch(xs, ids, sigma, seed, i), &draw)?;
            let mut c = empty.clone();
            preds.iter().enumerate().for_each(|(j, &l)| c[j][l] += 1);
            Ok(c)
        })
        .try_reduce(
            || empty.clone(),
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(ra, rb)| ra.iter_mut().zip(rb).for_each(|(x, y)| *x += y));
                Ok(a)
            },
        )
}

/// Randomized-smoothing certificates for a batch: `n0` pilot draws pick the candidate
/// class, `n` further draws count its hits, and the Clopper–Pearson lower bound `p_LB`
/// gives radius `sigma * inv_gauss_cdf(p_LB)` unless `p_LB <= 1/2`.
pub fn rs_certify_batch<S: Real, C: Classifier<S>>(
    net: &C,
    xs: &Tensor<S>,
    ids: &[u64],
    cfg: &McConfig,
    seed: u64,
) -> Result<Vec<Certificate>> {
    cfg.validate()?;
    let dim = net.input_dim();
    let pilot = class_counts(net, xs, ids, cfg.sigma, seed, 0..cfg.n0)?;
    let main = class_counts(net, xs, ids, cfg.sigma, seed, cfg.n0..cfg.n0 + cfg.n)?;
    pilot
        .iter()
        .zip(&main)
        .map(|(pc, mc)| {
            let label = argmax_count(pc);
            let p_lb = clopper_pearson_lower(mc[label], cfg.n, cfg.alpha)?;
            let r = if p_lb > 0.5 { cfg.sigma * inv_gauss_cdf(p_lb)? } else { 0.0 };
            Ok(Certificate::new(label, r, dim, Method::Rs, 1.0 - cfg.alpha))
        })
        .collect()
}

pub fn rs_certify<S: Real, C: Classifier<S>>(net: &C, x: &Tensor<S>, cfg: &McConfig, seed: u64) -> Result<Certificate> {
    Ok(rs_certify_batch(net, x, &[0], cfg, seed)?.remove(0))
}

fn argmax_count(c: &[u64]) -> usize {
    let mut best = 0;
    for (i, &v) in c.iter().enumerate() {
        if v > c[best] {
            best = i;
        }
    }
    best
}

fn require_calibrated<S: Real, C: Classifier<S>>(net: &C) -> Result<()> {
    match net.lip_bound() {
        Some(l) if l <= 2.0 * (1.0 + 1e-9) => Ok(()),
        Some(l) => Err(HycasError::InvalidModel(format!("Lipschitz bound {l} exceeds 2"))),
        None => Err(HycasError::InvalidModel("network is not calibrated".into())),
    }
}

/// Margin certificates at a frozen noise state for every point of a batch.
pub fn lip_certify_batch<S: Real, C: Classifier<S>>(net: &C, xs: &Tensor<S>, frozen: &NoiseState<S>) -> Result<Vec<Certificate>> {
    require_calibrated(net)?;
    let z = net.logits(xs, frozen)?;
    let k = net.num_classes();
    z.to_f64_vec().chunks_exact(k).map(|row| margin_certificate(row, net.input_dim())).collect()
}

pub fn lip_certify<S: Real, C: Classifier<S>>(net: &C, x: &Tensor<S>, frozen: &NoiseState<S>) -> Result<Certificate> {
    Ok(lip_certify_batch(net, x, frozen)?.remove(0))
}

/// The frozen noise state used by [`certify`]'s margin branch.
pub fn frozen_noise<S: Real>(seed: u64) -> NoiseState<S> {
    NoiseState::derive(rng::derive(seed, &[rng::tag("frozen")]), 0)
}

/// Picks the stronger certificate: abstain when both radii are zero, otherwise the larger
/// radius with ties going to randomized smoothing.
pub fn choose(rs: &Certificate, lip: &Certificate) -> Certificate {
    if rs.abstain && lip.abstain {
        let mut c = rs.clone();
        c.radius_l2 = 0.0;
        c.radius_linf = 0.0;
        return c;
    }
    if rs.radius_l2 >= lip.radius_l2 {
        rs.clone()
    } else {
        lip.clone()
    }
}

/// Runs both branches with `alpha / 2` each and selects per [`choose`].
pub fn certify_batch<S: Real, C: Classifier<S>>(
    net: &C,
    xs: &Tensor<S>,
    ids: &[u64],
    cfg: &McConfig,
    seed: u64,
) -> Result<Vec<DualCertificate>> {
    cfg.validate()?;
    let half = McConfig { alpha: cfg.alpha / 2.0, ..cfg.clone() };
    let rs = rs_certify_batch(net, xs, ids, &half, seed)?;
    let lip = match cfg.lip_mode {
        LipMode::Frozen => lip_certify_batch(net, xs, &frozen_noise(seed))?,
        LipMode::ExpectedLcb { samples } => {
            require_calibrated(net)?;
            let k = net.num_classes();
            let lip_seed = rng::derive(seed, &[rng::tag("expected")]);
            let mut per_point: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(samples); ids.len()];
            for i in 0..samples {
                let z = net.logits(xs, &NoiseState::derive(lip_seed, i as u64))?.to_f64_vec();
                for (p, row) in z.chunks_exact(k).enumerate() {
                    per_point[p].push(row.to_vec());
                }
            }
            per_point
                .iter()
                .map(|s| margin_certificate_lcb(s, half.alpha, net.input_dim(), BoundMode::StudentT))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(rs
        .into_iter()
        .zip(lip)
        .map(|(rs, lip)| {
            let chosen = choose(&rs, &lip);
            DualCertificate { rs, lip, chosen }
        })
        .collect())
}

pub fn certify<S: Real, C: Classifier<S>>(net: &C, x: &Tensor<S>, cfg: &McConfig, seed: u64) -> Result<DualCertificate> {
    Ok(certify_batch(net, x, &[0], cfg, seed)?.remove(0))
}

/// Majority vote of the noisy classifier at each point, drawing in rounds of `round` and
/// stopping early for a point once a Clopper–Pearson bound at level `1 - stop_alpha` puts
/// its leading class above one half. Points that never separate use the plain majority
/// after `max_draws`.
pub fn smoothed_vote<S: Real, C: Classifier<S>>(
    net: &C,
    xs: &Tensor<S>,
    ids: &[u64],
    sigma: f64,
    seed: u64,
    max_draws: u64,
    stop_alpha: f64,
) -> Result<Vec<usize>> {
    let p = ids.len();
    let k = net.num_classes();
    let per = if p == 0 { 0 } else { xs.len() / p };
    let shape = xs.shape()[1..].to_vec();
    let mut counts = vec![vec![0u64; k]; p];
    let mut decided: Vec<Option<usize>> = vec![None; p];
    let round = 16u64;
    let mut done = 0u64;
    while done < max_draws && decided.iter().any(Option::is_none) {
        let active: Vec<usize> = (0..p).filter(|&j| decided[j].is_none()).collect();
        let mut data = Vec::with_capacity(active.len() * per);
        for &j in &active {
            data.extend_from_slice(&xs.data()[j * per..(j + 1) * per]);
        }
        let mut bshape = vec![active.len()];
        bshape.extend_from_slice(&shape);
        let sub = Tensor::new(&bshape, data)?;
        let sub_ids: Vec<u64> = active.iter().map(|&j| ids[j]).collect();
        let end = (done + round).min(max_draws);
        let c = class_counts(net, &sub, &sub_ids, sigma, seed, done..end)?;
        done = end;
        for (&j, cj) in active.iter().zip(c) {
            counts[j].iter_mut().zip(cj).for_each(|(a, b)| *a += b);
            let top = argmax_count(&counts[j]);
            if clopper_pearson_lower(counts[j][top], done, stop_alpha)? > 0.5 {
                decided[j] = Some(top);
            }
        }
    }
    Ok((0..p).map(|j| decided[j].unwrap_or_else(|| argmax_count(&counts[j]))).collect())
}
