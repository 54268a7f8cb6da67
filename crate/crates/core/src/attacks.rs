//! White-box ℓ∞ attacks under a frozen noise state, and robust-accuracy evaluation.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{HycasError, Result};
use crate::model::Differentiable;
use crate::rng;
use crate::scalar::Real;
use crate::streams::NoiseState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMethod {
    Pgd,
    Apgd,
}

impl AttackMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Pgd => "pgd",
            AttackMethod::Apgd => "apgd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pgd" => Ok(AttackMethod::Pgd),
            "apgd" => Ok(AttackMethod::Apgd),
            other => Err(HycasError::Config(format!("unknown attack method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub step: f64,
    pub iters: usize,
    pub restarts: usize,
    /// Start each restart from a uniform point of the ball instead of `x`.
    pub random_init: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { epsilon: 8.0 / 255.0, step: 20.0 / 255.0, iters: 20, restarts: 5, random_init: true, seed: 0 }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) || !(self.step >= 0.0) || self.restarts == 0 {
            return Err(HycasError::InvalidArgument(format!("invalid attack configuration {:?}", self)));
        }
        Ok(())
    }
}

/// Momentum of the APGD update.
pub const APGD_MOMENTUM: f64 = 0.75;
/// Fraction of the iteration budget between step-size checkpoints.
pub const APGD_WINDOW: f64 = 0.22;

fn project<S: Real>(v: S, x: S, eps: S) -> S {
    v.max(x - eps).min(x + eps).max(S::zero()).min(S::one())
}

fn sign<S: Real>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

fn init_point<S: Real>(x: &Tensor<S>, cfg: &AttackConfig, restart: usize) -> Tensor<S> {
    let eps = S::lit(cfg.epsilon);
    if !cfg.random_init || cfg.epsilon == 0.0 {
        return x.map(|v| project(v, v, eps));
    }
    let mut r = rng::rng_from(rng::derive(cfg.seed, &[rng::tag("init"), restart as u64]));
    let mut out = x.clone();
    for v in out.data_mut() {
        let d = S::lit(r.random_range(-cfg.epsilon..=cfg.epsilon));
        *v = project(*v + d, *v, eps);
    }
    out
}

/// Keeps, per sample, the iterate with the highest loss seen so far.
struct Best<S> {
    loss: Vec<S>,
    x: Tensor<S>,
    per: usize,
}

impl<S: Real> Best<S> {
    fn new(x: &Tensor<S>, n: usize) -> Self {
        Self { loss: vec![S::neg_infinity(); n], x: x.clone(), per: x.len() / n.max(1) }
    }

    fn offer(&mut self, cand: &Tensor<S>, losses: &[S]) -> Vec<bool> {
        let mut improved = vec![false; losses.len()];
        for (i, &l) in losses.iter().enumerate() {
            if l > self.loss[i] {
                self.loss[i] = l;
                let r = i * self.per..(i + 1) * self.per;
                self.x.data_mut()[r.clone()].copy_from_slice(&cand.data()[r]);
                improved[i] = true;
            }
        }
        improved
    }
}

/// Projected sign-gradient ascent on the cross-entropy inside the ℓ∞ ball and `[0, 1]`.
/// Returns, per sample, the highest-loss iterate over all restarts (including the starts).
pub fn pgd_attack<S: Real, C: Differentiable<S>>(
    net: &C,
    x: &Tensor<S>,
    y: &[usize],
    cfg: &AttackConfig,
    noise: &NoiseState<S>,
) -> Result<Tensor<S>> {
    cfg.validate()?;
    let draw = net.draw(noise)?;
    let (eps, step) = (S::lit(cfg.epsilon), S::lit(cfg.step));
    let mut best = Best::new(x, y.len());
    for r in 0..cfg.restarts {
        let mut cur = init_point(x, cfg, r);
        for _ in 0..cfg.iters {
            let (loss, grad) = net.loss_grad_drawn(&cur, y, &draw)?;
            best.offer(&cur, &loss);
            for ((v, &g), &x0) in cur.data_mut().iter_mut().zip(grad.data()).zip(x.data()) {
                *v = project(*v + step * sign(g), x0, eps);
            }
        }
        let (loss, _) = net.loss_grad_drawn(&cur, y, &draw)?;
        best.offer(&cur, &loss);
    }
    Ok(best.x)
}

/// Momentum sign-gradient ascent with step halving: every `ceil(0.22 k)` iterations, a
/// sample whose best loss did not improve during the window has its step halved and
/// restarts from its best point.
pub fn apgd_attack<S: Real, C: Differentiable<S>>(
    net: &C,
    x: &Tensor<S>,
    y: &[usize],
    cfg: &AttackConfig,
    noise: &NoiseState<S>,
) -> Result<Tensor<S>> {
    cfg.validate()?;
    let draw = net.draw(noise)?;
    let n = y.len();
    let per = x.len() / n.max(1);
    let eps = S::lit(cfg.epsilon);
    let alpha = S::lit(APGD_MOMENTUM);
    let window = ((APGD_WINDOW * cfg.iters as f64).ceil() as usize).max(1);
    let mut best = Best::new(x, n);
    for r in 0..cfg.restarts {
        let mut run_best = Best::new(x, n);
        let mut steps = vec![S::lit(cfg.step); n];
        let mut cur = init_point(x, cfg, r);
        let mut prev = cur.clone();
        let mut improved_in_window = vec![false; n];
        for t in 0..cfg.iters {
            let (loss, grad) = net.loss_grad_drawn(&cur, y, &draw)?;
            best.offer(&cur, &loss);
            run_best.offer(&cur, &loss).iter().zip(&mut improved_in_window).for_each(|(&i, w)| *w |= i);
            let mut next = cur.clone();
            for s in 0..n {
                let r = s * per..(s + 1) * per;
                for j in r {
                    let (c, p, x0) = (cur.data()[j], prev.data()[j], x.data()[j]);
                    let z = project(c + steps[s] * sign(grad.data()[j]), x0, eps);
                    let v = if t == 0 { z } else { c + alpha * (z - c) + (S::one() - alpha) * (c - p) };
                    next.data_mut()[j] = project(v, x0, eps);
                }
            }
            prev = cur;
            cur = next;
            if (t + 1) % window == 0 {
                for s in 0..n {
                    if !improved_in_window[s] {
                        steps[s] = steps[s] * S::lit(0.5);
                        let r = s * per..(s + 1) * per;
                        cur.data_mut()[r.clone()].copy_from_slice(&run_best.x.data()[r.clone()]);
                        prev.data_mut()[r.clone()].copy_from_slice(&run_best.x.data()[r]);
                    }
                }
                improved_in_window = vec![false; n];
            }
        }
        let (loss, _) = net.loss_grad_drawn(&cur, y, &draw)?;
        best.offer(&cur, &loss);
    }
    Ok(best.x)
}

pub fn run_attack<S: Real, C: Differentiable<S>>(
    method: AttackMethod,
    net: &C,
    x: &Tensor<S>,
    y: &[usize],
    cfg: &AttackConfig,
    noise: &NoiseState<S>,
) -> Result<Tensor<S>> {
    match method {
        AttackMethod::Pgd => pgd_attack(net, x, y, cfg, noise),
        AttackMethod::Apgd => apgd_attack(net, x, y, cfg, noise),
    }
}

/// Normalized-gradient ascent inside the ℓ2 ball of `radius` around `x`, with the loss
/// averaged over `noises` (a single state gives a frozen-noise attack). No pixel clipping:
/// the probe targets certificates stated in unconstrained input space.
pub fn pgd_l2<S: Real, C: Differentiable<S>>(
    net: &C,
    x: &Tensor<S>,
    y: &[usize],
    radius: f64,
    iters: usize,
    noises: &[NoiseState<S>],
) -> Result<Tensor<S>> {
    let n = y.len();
    let per = x.len() / n.max(1);
    let draws = noises.iter().map(|s| net.draw(s)).collect::<Result<Vec<_>>>()?;
    let step = S::lit(2.5 * radius / iters.max(1) as f64);
    let rad = S::lit(radius);
    let mut cur = x.clone();
    for _ in 0..iters {
        let mut grad = vec![S::zero(); x.len()];
        for (draw, ns) in draws.iter().zip(noises) {
            let input = match &ns.epsilon {
                Some(e) => cur.add(e)?,
                None => cur.clone(),
            };
            let (_, g) = net.loss_grad_drawn(&input, y, draw)?;
            grad.iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b);
        }
        for s in 0..n {
            let r = s * per..(s + 1) * per;
            let gn = crate::tensor::kernels::norm2(&grad[r.clone()]);
            if gn > S::zero() {
                for j in r.clone() {
                    cur.data_mut()[j] += step * grad[j] / gn;
                }
            }
            let d: Vec<S> = r.clone().map(|j| cur.data()[j] - x.data()[j]).collect();
            let dn = crate::tensor::kernels::norm2(&d);
            if dn > rad {
                for (j, dv) in r.zip(d) {
                    cur.data_mut()[j] = x.data()[j] + dv * rad / dn;
                }
            }
        }
    }
    Ok(cur)
}

/// Per-sample outcome of an attack evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub index: usize,
    pub label: usize,
    pub clean_pred: usize,
    pub attacked_pred: usize,
    pub clean_correct: bool,
    /// Correct on the clean input and on the attacked input.
    pub attacked_correct: bool,
}

/// Attacks every sample under its own frozen noise state `NoiseState::derive(seed, i)`,
/// which is also the state used to classify the clean and attacked inputs.
pub fn robust_accuracy<S: Real, C: Differentiable<S>>(
    net: &C,
    xs: &Tensor<S>,
    ys: &[usize],
    cfg: &AttackConfig,
    method: AttackMethod,
    seed: u64,
) -> Result<(f64, Vec<AttackOutcome>)> {
    cfg.validate()?;
    let outcomes = (0..ys.len())
        .into_par_iter()
        .map(|i| {
            let x = xs.batch_item(i)?;
            let y = [ys[i]];
            let noise = NoiseState::derive(seed, i as u64);
            let draw = net.draw(&noise)?;
            let clean_pred = net.predict_drawn(&x, &draw)?[0];
            let attacked_pred = if cfg.epsilon == 0.0 {
                clean_pred
            } else {
                let local = AttackConfig { seed: rng::derive(cfg.seed, &[i as u64]), ..cfg.clone() };
                let adv = run_attack(method, net, &x, &y, &local, &noise)?;
                net.predict_drawn(&adv, &draw)?[0]
            };
            let clean_correct = clean_pred == ys[i];
            Ok(AttackOutcome {
                index: i,
                label: ys[i],
                clean_pred,
                attacked_pred,
                clean_correct,
                attacked_correct: clean_correct && attacked_pred == ys[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let acc = if outcomes.is_empty() {
        0.0
    } else {
        outcomes.iter().filter(|o| o.attacked_correct).count() as f64 / outcomes.len() as f64
    };
    Ok((acc, outcomes))
}

/// One point of [`robust_accuracy_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub epsilon: f64,
    /// Samples count as broken at this budget if any budget up to it broke them.
    pub accuracy: f64,
    /// Accuracy from the attack at this budget alone.
    pub independent_accuracy: f64,
}

/// Robust accuracy over non-decreasing budgets. Each budget runs `cfg` with the step scaled
/// by `epsilon / cfg.epsilon`; an adversarial input found at a smaller budget also lies in
/// every larger ball, so breaks carry forward and the emitted accuracies never increase.
pub fn robust_accuracy_sweep<S: Real, C: Differentiable<S>>(
    net: &C,
    xs: &Tensor<S>,
    ys: &[usize],
    cfg: &AttackConfig,
    epsilons: &[f64],
    method: AttackMethod,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if epsilons.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(HycasError::InvalidArgument(format!("budgets {epsilons:?} must be non-decreasing")));
    }
    let n = ys.len().max(1) as f64;
    let mut robust = vec![true; ys.len()];
    let mut out = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let step = if cfg.epsilon > 0.0 { cfg.step * eps / cfg.epsilon } else { cfg.step };
        let local = AttackConfig { epsilon: eps, step, ..cfg.clone() };
        let (independent, outcomes) = robust_accuracy(net, xs, ys, &local, method, seed)?;
        for (r, o) in robust.iter_mut().zip(&outcomes) {
            *r &= o.attacked_correct;
        }
        let accuracy = robust.iter().filter(|&&r| r).count() as f64 / n;
        out.push(SweepPoint { epsilon: eps, accuracy, independent_accuracy: independent });
    }
    Ok(out)
}
