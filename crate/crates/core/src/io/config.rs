//! Flat `key = value` run configuration with `#` comments.

use std::str::FromStr;

use crate::attacks::{AttackConfig, AttackMethod};
use crate::block::NetworkConfig;
use crate::error::{HycasError, Result};
use crate::tensor::Padding;
use crate::train::{OptimizerKind, TrainConfig, TrainMode};

pub const CONFIG_KEYS: &[&str] = &[
    "channels",
    "kernel_size",
    "padding",
    "cutoff_rho",
    "skip_beta",
    "fusion_rani",
    "rpfan_guard",
    "rani",
    "epochs",
    "batch_size",
    "learning_rate",
    "optimizer",
    "weight_decay",
    "sigma",
    "zeta",
    "phi",
    "nu",
    "kappa",
    "learnable_weights",
    "attack_method",
    "attack_eps",
    "attack_step",
    "attack_iters",
    "attack_restarts",
    "attack_random_init",
    "mode",
    "seed",
];

/// Everything a training run needs besides the data. Input geometry and class count come
/// from the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Inner attack for adversarial mode.
    pub attack: AttackConfig,
    pub mode: Option<TrainMode>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            attack: AttackConfig { epsilon: 0.05, step: 0.02, iters: 5, restarts: 1, ..AttackConfig::default() },
            mode: None,
        }
    }
}

impl RunConfig {
    /// Training settings for `mode`, with the attack attached in adversarial mode.
    pub fn train_config(&self, mode: TrainMode) -> TrainConfig {
        let mut t = self.train.clone();
        t.attack = (mode == TrainMode::Adversarial).then(|| AttackConfig { seed: t.seed, ..self.attack.clone() });
        t
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| HycasError::Config(format!("bad value '{v}' for key '{key}'")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(HycasError::Config(format!("bad value '{v}' for key '{key}', expected true or false"))),
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, v) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| HycasError::Config(format!("line {}: expected 'key = value', got '{line}'", lineno + 1)))?;
        let (n, t, a) = (&mut c.network, &mut c.train, &mut c.attack);
        match key {
            "channels" => {
                n.channels = v.split(',').map(|s| num(key, s.trim())).collect::<Result<_>>()?;
            }
            "kernel_size" => n.kernel_size = num(key, v)?,
            "padding" => {
                n.padding = match v {
                    "circular" => Padding::Circular,
                    "zero" => Padding::Zero,
                    _ => return Err(HycasError::Config(format!("bad value '{v}' for key 'padding'"))),
                }
            }
            "cutoff_rho" => n.cutoff_rho = num(key, v)?,
            "skip_beta" => n.skip_beta = num(key, v)?,
            "fusion_rani" => n.fusion_rani = flag(key, v)?,
            "rpfan_guard" => n.rpfan_guard = flag(key, v)?,
            "rani" => n.rani = flag(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "learning_rate" => t.learning_rate = num(key, v)?,
            "optimizer" => t.optimizer = OptimizerKind::parse(v)?,
            "weight_decay" => t.weight_decay = num(key, v)?,
            "sigma" => t.sigma = num(key, v)?,
            "zeta" => t.loss_weights.zeta = num(key, v)?,
            "phi" => t.loss_weights.phi = num(key, v)?,
            "nu" => t.loss_weights.nu = num(key, v)?,
            "kappa" => t.loss_weights.kappa = num(key, v)?,
            "learnable_weights" => t.loss_weights.learnable = flag(key, v)?,
            "attack_method" => t.attack_method = AttackMethod::parse(v)?,
            "attack_eps" => a.epsilon = num(key, v)?,
            "attack_step" => a.step = num(key, v)?,
            "attack_iters" => a.iters = num(key, v)?,
            "attack_restarts" => a.restarts = num(key, v)?,
            "attack_random_init" => a.random_init = flag(key, v)?,
            "mode" => c.mode = Some(TrainMode::parse(v)?),
            "seed" => {
                t.seed = num(key, v)?;
                n.seed = t.seed;
            }
            _ => return Err(HycasError::Config(format!("unknown config key '{key}'"))),
        }
    }
    c.train.validate()?;
    c.attack.validate().map_err(|e| HycasError::Config(e.to_string()))?;
    Ok(c)
}
