use crate::error::Result;
use crate::scalar::Real;
use crate::tensor::{Graph, Reduction, Tensor, Var};

/// Weights of the fused and per-stream cross-entropy terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// Frequency stream.
    pub zeta: f64,
    /// Spectrally normalized convolution stream.
    pub phi: f64,
    /// Random projection stream.
    pub nu: f64,
    /// Fused output.
    pub kappa: f64,
    /// Train `ln` of each weight alongside the network.
    pub learnable: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { zeta: 1.0, phi: 1.0, nu: 1.0, kappa: 1.0, learnable: false }
    }
}

impl LossWeights {
    /// `[zeta, phi, nu, kappa]`, matching the auxiliary head order followed by the fused term.
    pub fn as_array(&self) -> [f64; 4] {
        [self.zeta, self.phi, self.nu, self.kappa]
    }

    pub fn from_array(w: [f64; 4], learnable: bool) -> Self {
        Self { zeta: w[0], phi: w[1], nu: w[2], kappa: w[3], learnable }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.as_array().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(crate::HycasError::Config(format!("loss weights must be finite and >= 0: {:?}", self)));
        }
        Ok(())
    }
}

/// Records `kappa CE(fused) + zeta CE(fdpan) + phi CE(sncan) + nu CE(rpfan)`.
///
/// With `log_weights` (a `(4)` node holding `ln` of the weights in [`LossWeights::as_array`]
/// order) the weights are `exp` of it instead of the fixed values.
pub fn hycas_loss_node<S: Real>(
    g: &mut Graph<S>,
    fused: Var,
    aux: [Var; 3],
    y: &[usize],
    weights: &LossWeights,
    log_weights: Option<Var>,
) -> Result<Var> {
    let fixed = weights.as_array();
    let branches = [aux[0], aux[1], aux[2], fused];
    let learned = match log_weights {
        Some(lw) => {
            let col = g.reshape(lw, &[4, 1])?;
            let e = g.exp(col)?;
            Some(e)
        }
        None => None,
    };
    let mut total: Option<Var> = None;
    for (i, &logits) in branches.iter().enumerate() {
        let ce = g.softmax_ce(logits, y, Reduction::Mean)?;
        let term = match learned {
            Some(e) => {
                let w = g.row(e, i)?;
                g.scale_by(ce, w)?
            }
            None if fixed[i] == 0.0 => continue,
            None => g.scale(ce, S::lit(fixed[i]))?,
        };
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(g.constant(Tensor::scalar(S::zero()))),
    }
}

/// Evaluates the composite loss on plain logits.
pub fn hycas_loss<S: Real>(fused: &Tensor<S>, aux: [&Tensor<S>; 3], y: &[usize], weights: &LossWeights) -> Result<S> {
    let mut g = Graph::frozen();
    let f = g.constant(fused.clone());
    let a = aux.map(|t| g.constant(t.clone()));
    let l = hycas_loss_node(&mut g, f, a, y, weights, None)?;
    Ok(g.value(l).data()[0])
}
