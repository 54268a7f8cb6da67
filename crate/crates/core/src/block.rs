//! Convex channel-gated fusion of the streams, block stacking, and global calibration.

use nalgebra::DMatrix;

use crate::error::{shape_err, HycasError, Result};
use crate::model::{cross_entropy_rows, Classifier, Differentiable};
use crate::rng;
use crate::scalar::Real;
use crate::spectral::{spectral_norm_fourier, EPS_GUARD};
use crate::streams::rani::{rani_mask_node, rani_residual};
use crate::streams::{NoiseState, RaniParams, Stream, StreamConfig, StreamDraw, StreamKind, StreamSource};
use crate::tensor::{nhwc, Graph, Padding, Reduction, Tensor, Var};

/// Per-channel softmax of `(3, C)` gate logits over the stream axis.
pub fn gate_weights<S: Real>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    let mut g = Graph::frozen();
    let v = g.constant(logits.clone());
    let a = g.softmax_axis0(v)?;
    Ok(g.value(a).clone())
}

/// Architecture and noise-path options of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_hw: (usize, usize),
    pub in_channels: usize,
    /// Output channels of each block.
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub num_classes: usize,
    pub padding: Padding,
    pub cutoff_rho: f64,
    pub skip_beta: f64,
    /// Adds a halved RANI residual around each block's fused output.
    pub fusion_rani: bool,
    pub rpfan_guard: bool,
    pub rani: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_hw: (8, 8),
            in_channels: 1,
            channels: vec![4, 4],
            kernel_size: 3,
            num_classes: 2,
            padding: Padding::Circular,
            cutoff_rho: 0.5,
            skip_beta: 1.0,
            fusion_rani: false,
            rpfan_guard: true,
            rani: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HycasBlock<S> {
    /// In [`StreamKind::ALL`] order.
    pub streams: Vec<Stream<S>>,
    /// `(3, C)` gate logits.
    pub gate: Tensor<S>,
    pub fusion: Option<RaniParams<S>>,
    pub salt: u64,
}

/// Realized randomness of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDraw<S> {
    pub streams: Vec<StreamDraw<S>>,
    pub fusion_mask: Option<Tensor<S>>,
}

/// Realized randomness of a whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDraw<S> {
    pub blocks: Vec<BlockDraw<S>>,
}

#[derive(Debug, Clone, Copy)]
pub enum BlockSource<'a, S> {
    Live(&'a NoiseState<S>),
    Drawn(&'a BlockDraw<S>),
}

#[derive(Debug, Clone, Copy)]
pub enum NetworkSource<'a, S> {
    Live(&'a NoiseState<S>),
    Drawn(&'a NetworkDraw<S>),
}

/// Node handles produced by one block.
pub struct BlockNodes {
    pub output: Var,
    pub streams: [Var; 3],
}

impl<S: Real> HycasBlock<S> {
    pub fn new(config: StreamConfig, fusion_rani: bool, seed: u64) -> Result<Self> {
        let streams = StreamKind::ALL
            .iter()
            .map(|&k| Stream::new(k, config.clone(), seed))
            .collect::<Result<Vec<_>>>()?;
        let fusion = fusion_rani.then(|| RaniParams::init(config.cout, rng::derive(seed, &[rng::tag("fusion")])));
        Ok(Self { streams, gate: Tensor::zeros(&[3, config.cout]), fusion, salt: seed })
    }

    pub fn channels(&self) -> usize {
        self.gate.shape()[1]
    }

    pub fn stream(&self, kind: StreamKind) -> &Stream<S> {
        &self.streams[StreamKind::ALL.iter().position(|&k| k == kind).expect("known kind")]
    }

    fn fusion_seed(&self, noise: &NoiseState<S>) -> u64 {
        rng::derive(noise.omega_seed, &[self.salt, rng::tag("fusion")])
    }

    pub fn draw(&self, noise: &NoiseState<S>) -> Result<BlockDraw<S>> {
        let streams = self.streams.iter().map(|s| s.draw(noise)).collect::<Result<Vec<_>>>()?;
        let fusion_mask = match &self.fusion {
            None => None,
            Some(p) => {
                let hw = self.streams[0].config.hw;
                let m = crate::streams::rani_mask(hw, p, self.fusion_seed(noise))?;
                Some(m.reshape(&[1, hw.0, hw.1, self.channels()])?)
            }
        };
        Ok(BlockDraw { streams, fusion_mask })
    }

    pub fn forward_node(&self, g: &mut Graph<S>, x: Var, src: BlockSource<'_, S>, prefix: &str) -> Result<BlockNodes> {
        let outs = self
            .streams
            .iter()
            .enumerate()
            .map(|(b, s)| {
                let ss = match src {
                    BlockSource::Live(n) => StreamSource::Live(n),
                    BlockSource::Drawn(d) => StreamSource::Drawn(&d.streams[b]),
                };
                s.forward_node(g, x, ss, &format!("{prefix}.{}", s.kind.name()))
            })
            .collect::<Result<Vec<_>>>()?;
        let shape = g.shape(outs[0]).to_vec();
        if outs.iter().any(|&o| g.shape(o) != shape.as_slice()) {
            return shape_err("block", "stream outputs disagree in shape");
        }
        let [n, h, w, _] = nhwc(&shape, "block")?;
        let lam = g.param(&format!("{prefix}.gate"), &self.gate);
        let alpha = g.softmax_axis0(lam)?;
        let mut fused: Option<Var> = None;
        for (b, &o) in outs.iter().enumerate() {
            let a = g.row(alpha, b)?;
            let a = g.expand(a, &[n, h, w])?;
            let term = g.hadamard(a, o)?;
            fused = Some(match fused {
                None => term,
                Some(f) => g.add(f, term)?,
            });
        }
        let mut z = fused.expect("three streams");
        if let Some(params) = &self.fusion {
            let m = match src {
                BlockSource::Live(noise) => {
                    rani_mask_node(g, params, &format!("{prefix}.fusion_rani"), (h, w), self.fusion_seed(noise))?
                }
                BlockSource::Drawn(d) => {
                    let m = d.fusion_mask.clone().ok_or_else(|| HycasError::InvalidArgument("draw lacks a fusion mask".into()))?;
                    g.constant(m)
                }
            };
            let r = rani_residual(g, z, m, S::one())?;
            z = g.scale(r, S::lit(0.5))?;
        }
        Ok(BlockNodes { output: z, streams: [outs[0], outs[1], outs[2]] })
    }

    /// Lipschitz factor of the fused map given ≤2-Lipschitz streams: `2 * sqrt(sum_b max_c alpha)`.
    /// Per channel the convex mix obeys `(sum_b a_b d_b)^2 <= sum_b a_b d_b^2`; summing over
    /// channels bounds each stream's share by its largest weight. Equals 2 when every
    /// stream's weight is constant across channels.
    pub fn lip_factor(&self) -> Result<f64> {
        let alpha = gate_weights(&self.gate)?;
        let c = self.channels();
        let spread: f64 = alpha
            .data()
            .chunks_exact(c)
            .map(|row| row.iter().map(|v| v.as_f64()).fold(0.0, f64::max))
            .sum();
        Ok(2.0 * spread.max(1.0).sqrt())
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for s in &self.streams {
            s.visit_params(&format!("{prefix}.{}", s.kind.name()), f);
        }
        f(&format!("{prefix}.gate"), &self.gate);
        if let Some(r) = &self.fusion {
            r.visit(&format!("{prefix}.fusion_rani"), f);
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for s in &mut self.streams {
            let p = format!("{prefix}.{}", s.kind.name());
            s.visit_params_mut(&p, f);
        }
        f(&format!("{prefix}.gate"), &mut self.gate);
        if let Some(r) = &mut self.fusion {
            r.visit_mut(&format!("{prefix}.fusion_rani"), f);
        }
    }
}

/// Stacked blocks with GroupSort between them and a dense head on the flattened features.
#[derive(Debug, Clone)]
pub struct HycasNetwork<S> {
    pub config: NetworkConfig,
    pub blocks: Vec<HycasBlock<S>>,
    /// `(K, H*W*C)`.
    pub head_w: Tensor<S>,
    pub head_b: Tensor<S>,
    /// Per-stream auxiliary heads on the last block (GAP then dense), used only for training.
    pub aux_w: Vec<Tensor<S>>,
    pub aux_b: Vec<Tensor<S>>,
    pub calibrator_gamma: f64,
    /// Bound from the last call to [`HycasNetwork::calibrate`].
    pub lip_bound: Option<f64>,
}

/// Node handles of a full forward pass.
pub struct ForwardNodes {
    pub input: Var,
    pub logits: Var,
    /// Auxiliary logits in [`StreamKind::ALL`] order.
    pub aux: [Var; 3],
}

impl<S: Real> HycasNetwork<S> {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        let (h, w) = config.input_hw;
        if config.channels.is_empty() {
            return Err(HycasError::InvalidArgument("network needs at least one block".into()));
        }
        if config.num_classes < 2 {
            return Err(HycasError::InvalidArgument("network needs at least two classes".into()));
        }
        let last = config.channels.len() - 1;
        if config.channels[..last].iter().any(|c| c % 2 != 0) {
            return Err(HycasError::InvalidArgument(
                "blocks followed by GroupSort need an even channel count".into(),
            ));
        }
        let mut blocks = Vec::new();
        let mut cin = config.in_channels;
        for (i, &cout) in config.channels.iter().enumerate() {
            let mut sc = StreamConfig::new(config.kernel_size, cin, cout, config.input_hw);
            sc.padding = config.padding;
            sc.cutoff_rho = config.cutoff_rho;
            sc.skip_beta = config.skip_beta;
            sc.rpfan_guard = config.rpfan_guard;
            sc.rani = config.rani;
            blocks.push(HycasBlock::new(sc, config.fusion_rani, rng::derive(config.seed, &[rng::tag("block"), i as u64]))?);
            cin = cout;
        }
        let k = config.num_classes;
        let feat = h * w * cin;
        let mut r = rng::rng_from(rng::derive(config.seed, &[rng::tag("head")]));
        let head_w = Tensor::new(&[k, feat], rng::gaussian_vec(&mut r, k * feat, 1.0 / (feat as f64).sqrt()))?;
        let mut aux_w = Vec::new();
        let mut aux_b = Vec::new();
        for _ in 0..3 {
            aux_w.push(Tensor::new(&[k, cin], rng::gaussian_vec(&mut r, k * cin, 1.0 / (cin as f64).sqrt()))?);
            aux_b.push(Tensor::zeros(&[k]));
        }
        Ok(Self { config, blocks, head_w, head_b: Tensor::zeros(&[k]), aux_w, aux_b, calibrator_gamma: 1.0, lip_bound: None })
    }

    pub fn draw(&self, noise: &NoiseState<S>) -> Result<NetworkDraw<S>> {
        Ok(NetworkDraw { blocks: self.blocks.iter().map(|b| b.draw(noise)).collect::<Result<Vec<_>>>()? })
    }

    /// Records the network on `g`. Input noise, if any, must already be added to `x`.
    pub fn forward_node(&self, g: &mut Graph<S>, x: Var, src: NetworkSource<'_, S>) -> Result<ForwardNodes> {
        let [n, h, w, c] = nhwc(g.shape(x), "network")?;
        if (h, w) != self.config.input_hw || c != self.config.in_channels {
            return shape_err(
                "network",
                format!("input {:?} vs configured {:?} x {}", g.shape(x), self.config.input_hw, self.config.in_channels),
            );
        }
        let mut h_var = x;
        let mut last_streams = None;
        for (i, block) in self.blocks.iter().enumerate() {
            let bs = match src {
                NetworkSource::Live(n) => BlockSource::Live(n),
                NetworkSource::Drawn(d) => BlockSource::Drawn(&d.blocks[i]),
            };
            let nodes = block.forward_node(g, h_var, bs, &format!("block{i}"))?;
            h_var = nodes.output;
            if i + 1 < self.blocks.len() {
                h_var = g.groupsort2(h_var)?;
            }
            last_streams = Some(nodes.streams);
        }
        let feat = g.value(h_var).len() / n;
        let flat = g.reshape(h_var, &[n, feat])?;
        let hw_ = g.param("head.w", &self.head_w);
        let hb = g.param("head.b", &self.head_b);
        let logits = g.dense(flat, hw_, hb)?;
        let streams = last_streams.expect("at least one block");
        let mut aux = [logits; 3];
        for (b, kind) in StreamKind::ALL.iter().enumerate() {
            let pooled = g.gap(streams[b])?;
            let w = g.param(&format!("aux.{}.w", kind.name()), &self.aux_w[b]);
            let bias = g.param(&format!("aux.{}.b", kind.name()), &self.aux_b[b]);
            aux[b] = g.dense(pooled, w, bias)?;
        }
        Ok(ForwardNodes { input: x, logits, aux })
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&format!("block{i}"), f);
        }
        f("head.w", &self.head_w);
        f("head.b", &self.head_b);
        for (b, kind) in StreamKind::ALL.iter().enumerate() {
            f(&format!("aux.{}.w", kind.name()), &self.aux_w[b]);
            f(&format!("aux.{}.b", kind.name()), &self.aux_b[b]);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&format!("block{i}"), f);
        }
        f("head.w", &mut self.head_w);
        f("head.b", &mut self.head_b);
        for (b, kind) in StreamKind::ALL.iter().enumerate() {
            f(&format!("aux.{}.w", kind.name()), &mut self.aux_w[b]);
            f(&format!("aux.{}.b", kind.name()), &mut self.aux_b[b]);
        }
    }

    /// Every trainable kernel with its parameter name.
    pub fn kernels(&self) -> Vec<(String, &crate::spectral::KernelSpec<S>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for s in &b.streams {
                if let Some(k) = &s.kernel {
                    out.push((format!("block{i}.{}.kernel", s.kind.name()), k));
                }
            }
        }
        out
    }

    /// Re-normalizes every trainable kernel (power iteration, or the exact bound if `exact`).
    pub fn renormalize(&mut self, exact: bool) -> Result<()> {
        for b in &mut self.blocks {
            for s in &mut b.streams {
                s.renormalize(exact)?;
            }
        }
        Ok(())
    }

    /// Largest singular value of the head weight.
    pub fn head_spectral_norm(&self) -> f64 {
        let [k, f] = [self.head_w.shape()[0], self.head_w.shape()[1]];
        DMatrix::from_row_slice(k, f, &self.head_w.to_f64_vec()).singular_values().max()
    }

    /// Product of per-block factors times the head norm. Every trainable kernel must carry
    /// an estimate at most `1 + 1e-6`, and circular kernels are re-checked exactly.
    pub fn network_lip_bound(&self) -> Result<f64> {
        for (name, k) in self.kernels() {
            if !k.is_normalized() {
                return Err(HycasError::InvalidModel(format!("kernel {name} has not passed the spectral audit")));
            }
            if k.padding == Padding::Circular {
                let exact = spectral_norm_fourier(k, self.config.input_hw)?;
                if exact > 1.0 + EPS_GUARD {
                    return Err(HycasError::AuditViolation {
                        component: name,
                        detail: format!("operator norm {exact:.6} exceeds 1"),
                    });
                }
            }
        }
        let mut bound = self.head_spectral_norm();
        for b in &self.blocks {
            bound *= b.lip_factor()?;
        }
        Ok(bound)
    }

    /// Scales the head by `min(1, 2 / L)` and records the bound.
    pub fn calibrate(&mut self) -> Result<f64> {
        let l = self.network_lip_bound()?;
        let gamma = if l > 0.0 { (2.0 / l).min(1.0) } else { 1.0 };
        // scaling the whole affine head keeps every argmax
        self.head_w.scale_in_place(S::lit(gamma));
        self.head_b.scale_in_place(S::lit(gamma));
        self.calibrator_gamma *= gamma;
        self.lip_bound = Some(self.network_lip_bound()?);
        Ok(gamma)
    }

    pub fn is_calibrated(&self) -> bool {
        self.lip_bound.is_some_and(|l| l <= 2.0 * (1.0 + 1e-9))
    }

    /// Forward pass returning the logits and auxiliary logits, without parameter gradients.
    pub fn evaluate(&self, x: &Tensor<S>, noise: &NoiseState<S>) -> Result<(Tensor<S>, [Tensor<S>; 3])> {
        let mut g = Graph::frozen();
        let xv = g.constant(x.clone());
        let f = self.forward_node(&mut g, xv, NetworkSource::Live(noise))?;
        let aux = f.aux.map(|a| g.value(a).clone());
        Ok((g.value(f.logits).clone(), aux))
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }
}

impl<S: Real> Classifier<S> for HycasNetwork<S> {
    type Draw = NetworkDraw<S>;

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn input_shape(&self) -> [usize; 3] {
        [self.config.input_hw.0, self.config.input_hw.1, self.config.in_channels]
    }

    fn draw(&self, noise: &NoiseState<S>) -> Result<NetworkDraw<S>> {
        HycasNetwork::draw(self, noise)
    }

    fn logits_drawn(&self, x: &Tensor<S>, draw: &NetworkDraw<S>) -> Result<Tensor<S>> {
        let mut g = Graph::frozen();
        let xv = g.constant(x.clone());
        let f = self.forward_node(&mut g, xv, NetworkSource::Drawn(draw))?;
        Ok(g.value(f.logits).clone())
    }

    fn lip_bound(&self) -> Option<f64> {
        self.lip_bound.filter(|_| self.is_calibrated())
    }
}

impl<S: Real> Differentiable<S> for HycasNetwork<S> {
    fn loss_grad_drawn(&self, x: &Tensor<S>, y: &[usize], draw: &NetworkDraw<S>) -> Result<(Vec<S>, Tensor<S>)> {
        let mut g = Graph::frozen();
        let xv = g.input(x.clone());
        let f = self.forward_node(&mut g, xv, NetworkSource::Drawn(draw))?;
        let loss = g.softmax_ce(f.logits, y, Reduction::Sum)?;
        let grads = g.backward(loss)?;
        let gx = grads.get(xv).map(|v| v.to_vec()).unwrap_or_else(|| vec![S::zero(); x.len()]);
        Ok((cross_entropy_rows(g.value(f.logits), y), Tensor::new(x.shape(), gx)?))
    }
}
