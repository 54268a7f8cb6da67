//! Executable Lipschitz audit of a network: kernel norms by both estimators, sampled
//! input-output ratios of every stream, block and the full network, and the calibrated bound.

use rand::Rng;

use crate::block::{BlockSource, HycasBlock, HycasNetwork};
use crate::error::{HycasError, Result};
use crate::model::Classifier;
use crate::rng;
use crate::scalar::Real;
use crate::spectral::{spectral_norm_fourier, spectral_norm_power_iter, EPS_GUARD};
use crate::streams::{NoiseState, StreamKind};
use crate::tensor::{Graph, Padding, Tensor};

/// Lipschitz bound each stream (and a uniformly gated block) must respect.
pub const STREAM_BOUND: f64 = 2.0;
/// Slack allowed on sampled ratios.
pub const RATIO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    /// Input pairs per component.
    pub pairs: usize,
    /// Noise states averaged for the expected-output ratios.
    pub mc_samples: usize,
    /// Fixed noise states for the per-draw ratios.
    pub fixed_states: usize,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { pairs: 1000, mc_samples: 32, fixed_states: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelAudit {
    pub name: String,
    /// Exact norm; `None` for padding without a Fourier diagonalization.
    pub fourier: Option<f64>,
    pub power_iter: f64,
    /// Estimate carried by the kernel since its last re-normalization.
    pub stored: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionAudit {
    pub name: String,
    /// Batch-aware Rayleigh quotient used to normalize the projection.
    pub rayleigh: f64,
    /// Exact norm after batch-aware normalization alone.
    pub normalized_norm: Option<f64>,
    /// `max(0, normalized_norm - 1)`.
    pub excess: f64,
    /// Norm of the kernel actually applied.
    pub applied_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioAudit {
    pub component: String,
    /// Largest sampled ratio over all fixed noise states.
    pub fixed: f64,
    /// Largest sampled ratio of the output averaged over noise states.
    pub averaged: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub kernels: Vec<KernelAudit>,
    pub projections: Vec<ProjectionAudit>,
    pub ratios: Vec<RatioAudit>,
    pub head_norm: f64,
    /// Recomputed network bound, if the kernels allow one.
    pub network_bound: Option<f64>,
    pub gamma: f64,
    pub calibrated: bool,
    /// `(component, detail)` of every failed check.
    pub violations: Vec<(String, String)>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_error(&self) -> Option<HycasError> {
        let (component, detail) = self.violations.first()?;
        let more = self.violations.len() - 1;
        let detail = if more > 0 { format!("{detail} (and {more} more)") } else { detail.clone() };
        Some(HycasError::AuditViolation { component: component.clone(), detail })
    }

    /// CSV sections: kernels, projections, sampled ratios, then `#` summary lines.
    pub fn render(&self) -> String {
        let f = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("section,component,value_a,value_b,value_c,bound\n");
        for k in &self.kernels {
            out += &format!("kernel,{},{},{},{},1\n", k.name, f(k.fourier), k.power_iter, f(k.stored));
        }
        for p in &self.projections {
            out += &format!("projection,{},{},{},{},1\n", p.name, p.rayleigh, f(p.normalized_norm), f(p.applied_norm));
        }
        for r in &self.ratios {
            out += &format!("ratio,{},{},{},,{}\n", r.component, r.fixed, r.averaged, r.bound);
        }
        out += &format!("# head_norm = {}\n", self.head_norm);
        out += &format!("# network_bound = {}\n", f(self.network_bound));
        out += &format!("# gamma = {}\n", self.gamma);
        out += &format!("# calibrated = {}\n", self.calibrated);
        for (c, d) in &self.violations {
            out += &format!("# violation {c}: {d}\n");
        }
        out += &format!("# result = {}\n", if self.passed() { "pass" } else { "fail" });
        out
    }
}

/// Random input pairs with separations spread over four orders of magnitude.
fn sample_pairs<S: Real>(shape: [usize; 3], pairs: usize, seed: u64) -> Result<(Tensor<S>, Tensor<S>)> {
    let per = shape.iter().product::<usize>();
    let mut r = rng::rng_from(seed);
    let mut a = Vec::with_capacity(pairs * per);
    let mut b = Vec::with_capacity(pairs * per);
    for i in 0..pairs {
        let x: Vec<f64> = (0..per).map(|_| r.random::<f64>()).collect();
        let d: Vec<f64> = rng::gaussian_vec(&mut r, per, 1.0);
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let scale = 10f64.powi(-((i % 4) as i32));
        for (xv, dv) in x.iter().zip(&d) {
            a.push(S::lit(*xv));
            b.push(S::lit(xv + scale * dv / norm));
        }
    }
    let dims = [pairs, shape[0], shape[1], shape[2]];
    Ok((Tensor::new(&dims, a)?, Tensor::new(&dims, b)?))
}

fn max_ratio<S: Real>(fa: &Tensor<S>, fb: &Tensor<S>, a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    let n = a.shape()[0];
    let (pi, po) = (a.len() / n, fa.len() / n);
    (0..n)
        .map(|i| {
            let dout: f64 = (0..po).map(|j| (fa.data()[i * po + j] - fb.data()[i * po + j]).as_f64().powi(2)).sum();
            let din: f64 = (0..pi).map(|j| (a.data()[i * pi + j] - b.data()[i * pi + j]).as_f64().powi(2)).sum();
            (dout / din).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Largest fixed-noise ratio over `states` and the ratio of the `mc`-sample average.
fn ratios<S: Real>(
    f: &dyn Fn(&Tensor<S>, &NoiseState<S>) -> Result<Tensor<S>>,
    a: &Tensor<S>,
    b: &Tensor<S>,
    cfg: &AuditConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut fixed = 0.0f64;
    for s in 0..cfg.fixed_states {
        let noise = NoiseState::derive(rng::derive(seed, &[rng::tag("fixed")]), s as u64);
        fixed = fixed.max(max_ratio(&f(a, &noise)?, &f(b, &noise)?, a, b));
    }
    let mut mean: Option<(Tensor<S>, Tensor<S>)> = None;
    for s in 0..cfg.mc_samples {
        let noise = NoiseState::derive(rng::derive(seed, &[rng::tag("averaged")]), s as u64);
        let (ya, yb) = (f(a, &noise)?, f(b, &noise)?);
        mean = Some(match mean {
            None => (ya, yb),
            Some((ma, mb)) => (ma.add(&ya)?, mb.add(&yb)?),
        });
    }
    let averaged = match mean {
        Some((ma, mb)) => {
            // a common 1/mc factor scales both differences
            max_ratio(&ma, &mb, a, b) / cfg.mc_samples as f64
        }
        None => 0.0,
    };
    Ok((fixed, averaged))
}

fn block_output<S: Real>(block: &HycasBlock<S>, x: &Tensor<S>, noise: &NoiseState<S>) -> Result<Tensor<S>> {
    let draw = block.draw(noise)?;
    let mut g = Graph::frozen();
    let xv = g.constant(x.clone());
    let out = block.forward_node(&mut g, xv, BlockSource::Drawn(&draw), "block")?.output;
    Ok(g.value(out).clone())
}

pub fn audit_network<S: Real>(net: &HycasNetwork<S>, cfg: &AuditConfig) -> Result<AuditReport> {
    if cfg.pairs == 0 {
        return Err(HycasError::InvalidArgument("audit needs at least one input pair".into()));
    }
    let hw = net.config.input_hw;
    let mut violations = Vec::new();
    let limit = 1.0 + EPS_GUARD;

    let mut kernels = Vec::new();
    for (name, k) in net.kernels() {
        let fourier = match k.padding {
            Padding::Circular if k.stride == 1 => Some(spectral_norm_fourier(k, hw)?),
            _ => None,
        };
        let power_iter = spectral_norm_power_iter(k, hw, 50)?;
        let stored = k.sigma_hat.map(|v| v.as_f64());
        let worst = fourier.unwrap_or(power_iter);
        if worst > limit {
            violations.push((name.clone(), format!("operator norm {worst:.6} exceeds 1")));
        } else if !stored.is_some_and(|s| s <= limit) {
            violations.push((name.clone(), format!("stored estimate {stored:?} does not certify norm <= 1")));
        }
        kernels.push(KernelAudit { name, fourier, power_iter, stored });
    }

    let mut projections = Vec::new();
    let probe = NoiseState::derive(rng::derive(cfg.seed, &[rng::tag("projection")]), 0);
    for (i, b) in net.blocks.iter().enumerate() {
        let s = b.stream(StreamKind::Rpfan);
        let (rq, applied) = s.projection(&probe)?;
        let raw = s.raw_projection(&probe);
        let circular = raw.padding == Padding::Circular && raw.stride == 1;
        let normalized_norm = if circular {
            let mut k = raw.clone();
            k.kernel.scale_in_place(S::lit(1.0 / rq.max(1.0)));
            Some(spectral_norm_fourier(&k, hw)?)
        } else {
            None
        };
        let applied_norm = if circular { Some(spectral_norm_fourier(&applied, hw)?) } else { None };
        let name = format!("block{i}.rpfan.projection");
        if let Some(n) = applied_norm.filter(|&n| n > limit) {
            violations.push((name.clone(), format!("applied projection norm {n:.6} exceeds 1")));
        }
        projections.push(ProjectionAudit {
            name,
            rayleigh: rq,
            normalized_norm,
            excess: normalized_norm.map_or(0.0, |n| (n - 1.0).max(0.0)),
            applied_norm,
        });
    }

    let mut ratio_rows = Vec::new();
    for (i, b) in net.blocks.iter().enumerate() {
        let cin = b.streams[0].config.cin;
        let (xa, xb) = sample_pairs::<S>([hw.0, hw.1, cin], cfg.pairs, rng::derive(cfg.seed, &[rng::tag("pairs"), i as u64]))?;
        for s in &b.streams {
            let f = |x: &Tensor<S>, n: &NoiseState<S>| s.forward(x, n);
            let (fixed, averaged) = ratios(&f, &xa, &xb, cfg, rng::derive(cfg.seed, &[i as u64]))?;
            ratio_rows.push(RatioAudit { component: format!("block{i}.{}", s.kind.name()), fixed, averaged, bound: STREAM_BOUND });
        }
        let f = |x: &Tensor<S>, n: &NoiseState<S>| block_output(b, x, n);
        let (fixed, averaged) = ratios(&f, &xa, &xb, cfg, rng::derive(cfg.seed, &[i as u64]))?;
        ratio_rows.push(RatioAudit { component: format!("block{i}"), fixed, averaged, bound: b.lip_factor()? });
    }

    let network_bound = match net.network_lip_bound() {
        Ok(l) => Some(l),
        Err(e) => {
            violations.push(("network".into(), e.to_string()));
            None
        }
    };
    let calibrated = net.is_calibrated();
    if !calibrated {
        violations.push(("calibrator".into(), format!("network is not calibrated (recorded bound {:?})", net.lip_bound)));
    }
    if let Some(l) = network_bound {
        let c = &net.config;
        let (xa, xb) =
            sample_pairs::<S>([c.input_hw.0, c.input_hw.1, c.in_channels], cfg.pairs, rng::derive(cfg.seed, &[rng::tag("pairs-net")]))?;
        let f = |x: &Tensor<S>, n: &NoiseState<S>| net.logits_drawn(x, &net.draw(n)?);
        let (fixed, averaged) = ratios(&f, &xa, &xb, cfg, rng::derive(cfg.seed, &[rng::tag("network")]))?;
        ratio_rows.push(RatioAudit { component: "network".into(), fixed, averaged, bound: l });
        if calibrated && l > 2.0 * (1.0 + 1e-9) {
            violations.push(("network".into(), format!("bound {l:.6} exceeds 2 after calibration")));
        }
    }
    for r in &ratio_rows {
        let worst = r.fixed.max(r.averaged);
        if worst > r.bound + RATIO_TOL {
            violations.push((r.component.clone(), format!("sampled Lipschitz ratio {worst:.6} exceeds bound {:.6}", r.bound)));
        }
    }

    Ok(AuditReport {
        kernels,
        projections,
        ratios: ratio_rows,
        head_norm: net.head_spectral_norm(),
        network_bound,
        gamma: net.calibrator_gamma,
        calibrated,
        violations,
    })
}
