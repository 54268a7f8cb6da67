//! Certified (Gaussian input noise) and adversarial training loops.

mod loss;
mod optim;

use rand::seq::SliceRandom;

pub use loss::{hycas_loss, hycas_loss_node, LossWeights};
pub use optim::{Optimizer, OptimizerKind};

use crate::attacks::{run_attack, AttackConfig, AttackMethod};
use crate::block::{gate_weights, HycasNetwork, NetworkSource};
use crate::data::Dataset;
use crate::error::{HycasError, Result};
use crate::rng;
use crate::scalar::Real;
use crate::spectral::{spectral_norm_fourier, EPS_GUARD};
use crate::streams::NoiseState;
use crate::tensor::{Graph, Padding, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    /// Standard deviation of the Gaussian input noise.
    pub sigma: f64,
    pub loss_weights: LossWeights,
    /// Inner maximization for adversarial training.
    pub attack: Option<AttackConfig>,
    pub attack_method: AttackMethod,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.01,
            optimizer: OptimizerKind::SgdMomentum,
            weight_decay: 1e-4,
            sigma: 0.0,
            loss_weights: LossWeights::default(),
            attack: None,
            attack_method: AttackMethod::Pgd,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(HycasError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HycasError::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(HycasError::Config(format!("sigma {} must be finite and >= 0", self.sigma)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(HycasError::Config("weight_decay must be >= 0".into()));
        }
        self.loss_weights.validate()?;
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        Ok(())
    }
}

/// End-of-epoch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the fused output on the (noisy or attacked) training batches.
    pub train_accuracy: f64,
    /// Largest exact operator norm over all trainable kernels after re-normalization.
    pub max_kernel_norm: f64,
    /// Largest deviation of a gate column sum from 1.
    pub gate_defect: f64,
    pub learned_weights: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Calibrator gain applied after the last epoch.
    pub gamma: f64,
    pub lip_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Certified,
    Adversarial,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "certified" => Ok(Self::Certified),
            "adversarial" => Ok(Self::Adversarial),
            other => Err(HycasError::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Gaussian-noise training: one internal noise state per minibatch, a fresh input draw per
/// sample, spectral re-normalization after every step, calibration at the end.
pub fn train_certified<S: Real>(net: &mut HycasNetwork<S>, data: &Dataset, cfg: &TrainConfig) -> Result<History> {
    train(net, data, cfg, TrainMode::Certified)
}

/// Min-max training: per minibatch the attack runs under its own frozen noise state, then
/// parameters are updated on the attacked batch under a fresh state.
pub fn train_adversarial<S: Real>(net: &mut HycasNetwork<S>, data: &Dataset, cfg: &TrainConfig) -> Result<History> {
    if cfg.attack.is_none() {
        return Err(HycasError::Config("adversarial training needs an attack configuration".into()));
    }
    train(net, data, cfg, TrainMode::Adversarial)
}

pub fn train<S: Real>(net: &mut HycasNetwork<S>, data: &Dataset, cfg: &TrainConfig, mode: TrainMode) -> Result<History> {
    cfg.validate()?;
    check_data(net, data)?;
    if data.is_empty() {
        return Err(HycasError::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    let w0 = cfg.loss_weights.as_array();
    let mut log_weights: Tensor<S> = Tensor::from_f64(&[4], &w0.map(|w| w.max(1e-12).ln()))?;
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::rng_from(rng::derive(cfg.seed, &[rng::tag("shuffle"), epoch as u64])));
        let (mut loss_sum, mut correct, mut seen, mut batches) = (0.0, 0usize, 0usize, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch_seed = rng::derive(cfg.seed, &[epoch as u64, b as u64]);
            let (x, y) = data.batch::<S>(idx);
            let x = match (mode, &cfg.attack) {
                (TrainMode::Adversarial, Some(a)) if a.epsilon > 0.0 => {
                    let attack_noise = NoiseState::derive(rng::derive(batch_seed, &[rng::tag("attack")]), 0);
                    let local = AttackConfig { seed: rng::derive(batch_seed, &[rng::tag("attack-init")]), ..a.clone() };
                    run_attack(cfg.attack_method, &*net, &x, &y, &local, &attack_noise)?
                }
                _ => x,
            };
            let x = if cfg.sigma > 0.0 {
                let eps: Vec<S> =
                    rng::gaussian_vec(&mut rng::rng_from(rng::derive(batch_seed, &[rng::tag("epsilon")])), x.len(), cfg.sigma);
                Tensor::new(x.shape(), x.data().iter().zip(eps).map(|(&a, e)| a + e).collect())?
            } else {
                x
            };
            let noise = NoiseState::derive(batch_seed, 0);
            let mut g = Graph::new();
            let xv = g.constant(x);
            let f = net.forward_node(&mut g, xv, NetworkSource::Live(&noise))?;
            let lw = cfg.loss_weights.learnable.then(|| g.param("loss.log_weights", &log_weights));
            let loss = hycas_loss_node(&mut g, f.logits, f.aux, &y, &cfg.loss_weights, lw)?;
            let lval = g.value(loss).data()[0].as_f64();
            if !lval.is_finite() {
                return Err(HycasError::Divergence(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            let grads = g.backward(loss)?;
            opt.begin_step();
            net.visit_params_mut(&mut |name, p| {
                if let Some(gr) = grads.param(name) {
                    opt.update(name, p, gr);
                }
            });
            if let Some(gr) = grads.param("loss.log_weights") {
                opt.update("loss.log_weights", &mut log_weights, gr);
            }
            net.renormalize(false)?;
            let logits = g.value(f.logits);
            let k = net.config.num_classes;
            correct += logits
                .data()
                .chunks_exact(k)
                .zip(&y)
                .filter(|(row, &t)| crate::tensor::kernels::argmax(row) == t)
                .count();
            seen += y.len();
            loss_sum += lval;
            batches += 1;
        }
        net.renormalize(true)?;
        let (max_kernel_norm, gate_defect) = epoch_audit(net)?;
        let learned_weights = if cfg.loss_weights.learnable {
            let v = log_weights.to_f64_vec();
            [v[0].exp(), v[1].exp(), v[2].exp(), v[3].exp()]
        } else {
            w0
        };
        history.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / batches as f64,
            train_accuracy: correct as f64 / seen as f64,
            max_kernel_norm,
            gate_defect,
            learned_weights,
        });
    }
    net.renormalize(true)?;
    history.gamma = net.calibrate()?;
    history.lip_bound = net.lip_bound.unwrap_or(f64::INFINITY);
    Ok(history)
}

fn check_data<S: Real>(net: &HycasNetwork<S>, data: &Dataset) -> Result<()> {
    let c = &net.config;
    if (data.height, data.width) != c.input_hw || data.channels != c.in_channels || data.num_classes != c.num_classes {
        return Err(HycasError::InvalidArgument(format!(
            "dataset {}x{}x{} with {} classes does not fit a network for {:?}x{} with {} classes",
            data.height, data.width, data.channels, data.num_classes, c.input_hw, c.in_channels, c.num_classes
        )));
    }
    Ok(())
}

/// Exact kernel norms and gate convexity; errors on any violation.
pub fn epoch_audit<S: Real>(net: &HycasNetwork<S>) -> Result<(f64, f64)> {
    let mut max_norm = 0.0f64;
    for (name, k) in net.kernels() {
        let s = if k.padding == Padding::Circular {
            spectral_norm_fourier(k, net.config.input_hw)?
        } else {
            k.sigma_hat.map(|v| v.as_f64()).unwrap_or(f64::INFINITY)
        };
        if s > 1.0 + EPS_GUARD {
            return Err(HycasError::AuditViolation { component: name, detail: format!("operator norm {s:.8} exceeds 1") });
        }
        max_norm = max_norm.max(s);
    }
    let mut defect = 0.0f64;
    for (i, b) in net.blocks.iter().enumerate() {
        let a = gate_weights(&b.gate)?;
        let c = b.channels();
        for ch in 0..c {
            let col: Vec<f64> = (0..3).map(|r| a.data()[r * c + ch].as_f64()).collect();
            if col.iter().any(|&v| v < 0.0) {
                return Err(HycasError::AuditViolation { component: format!("block{i}.gate"), detail: "negative weight".into() });
            }
            defect = defect.max((col.iter().sum::<f64>() - 1.0).abs());
        }
    }
    if defect > 1e-7 {
        return Err(HycasError::AuditViolation { component: "gate".into(), detail: format!("column sums deviate by {defect}") });
    }
    Ok((max_norm, defect))
}

/// Fraction of samples whose prediction under `NoiseState::derive(seed, i)` matches the label.
pub fn accuracy<S: Real>(net: &HycasNetwork<S>, data: &Dataset, seed: u64) -> Result<f64> {
    use crate::model::Classifier;
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for i in 0..data.len() {
        let (x, y) = data.batch::<S>(&[i]);
        if net.predict(&x, &NoiseState::derive(seed, i as u64))?[0] == y[0] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
