use std::collections::HashMap;

use crate::error::{HycasError, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    AdamW,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "sgd_momentum" => Ok(Self::SgdMomentum),
            "adamw" => Ok(Self::AdamW),
            other => Err(HycasError::Config(format!("unknown optimizer '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::SgdMomentum => "sgd_momentum",
            Self::AdamW => "adamw",
        }
    }
}

/// First-order optimizer with per-parameter state keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    t: u64,
    state: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Self { kind, lr, momentum: 0.9, weight_decay, betas: (0.9, 0.999), eps: 1e-8, t: 0, state: HashMap::new() }
    }

    /// Advances the step counter; call once per update before [`Optimizer::update`].
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update<S: Real>(&mut self, name: &str, param: &mut Tensor<S>, grad: &[S]) {
        let n = param.len();
        let (m, v) = self.state.entry(name.to_string()).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let (lr, wd) = (self.lr, self.weight_decay);
        let t = self.t.max(1) as i32;
        for (i, p) in param.data_mut().iter_mut().enumerate() {
            let pv = p.as_f64();
            let g = grad[i].as_f64();
            let next = match self.kind {
                OptimizerKind::Sgd => pv - lr * (g + wd * pv),
                OptimizerKind::SgdMomentum => {
                    m[i] = self.momentum * m[i] + g + wd * pv;
                    pv - lr * m[i]
                }
                OptimizerKind::AdamW => {
                    let (b1, b2) = self.betas;
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let mh = m[i] / (1.0 - b1.powi(t));
                    let vh = v[i] / (1.0 - b2.powi(t));
                    pv - lr * (mh / (vh.sqrt() + self.eps) + wd * pv)
                }
            };
            *p = S::lit(next);
        }
    }
}
