//! In-memory labelled image sets and the synthetic generators used for desk-scale runs.

use rand::Rng;

use crate::error::{HycasError, Result};
use crate::rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Images in `[0, 1]`, stored as `f32` in NHWC order, with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub images: Vec<f32>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn new(
        (height, width, channels): (usize, usize, usize),
        num_classes: usize,
        images: Vec<f32>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        let per = height * width * channels;
        if images.len() != per * labels.len() {
            return Err(HycasError::Format(format!(
                "{} pixel values for {} samples of {}x{}x{}",
                images.len(),
                labels.len(),
                height,
                width,
                channels
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(HycasError::Format(format!("label {bad} not below {num_classes} classes")));
        }
        Ok(Self { height, width, channels, num_classes, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// The selected samples as an `(N, H, W, C)` tensor and their labels.
    pub fn batch<S: Real>(&self, idx: &[usize]) -> (Tensor<S>, Vec<usize>) {
        let per = self.sample_len();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend(self.images[i * per..(i + 1) * per].iter().map(|&v| S::lit(v as f64)));
        }
        let t = Tensor::new(&[idx.len(), self.height, self.width, self.channels], data).expect("sizes agree");
        (t, idx.iter().map(|&i| self.labels[i] as usize).collect())
    }

    pub fn all<S: Real>(&self) -> (Tensor<S>, Vec<usize>) {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Samples with indices `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let per = self.sample_len();
        Self {
            images: self.images[start * per..end * per].to_vec(),
            labels: self.labels[start..end].to_vec(),
            ..self.clone()
        }
    }
}

/// Synthetic image families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Class 0: a Gaussian blob. Class 1: a horizontal or vertical stripe.
    BlobStripe,
    /// Class `k`: the `k`-th quadrant is brighter (up to four classes).
    Quadrant,
}

impl Pattern {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "blob-stripe" => Ok(Pattern::BlobStripe),
            "quadrant" => Ok(Pattern::Quadrant),
            other => Err(HycasError::Config(format!("unknown pattern '{other}' (expected blob-stripe or quadrant)"))),
        }
    }

    pub fn max_classes(self) -> usize {
        match self {
            Pattern::BlobStripe => 2,
            Pattern::Quadrant => 4,
        }
    }
}

/// Background level and per-pixel noise of the generated images.
const BACKGROUND: f64 = 0.3;
const PIXEL_NOISE: f64 = 0.08;
const CONTRAST: f64 = 0.6;

/// Deterministic single-channel synthetic set; labels cycle through the classes.
pub fn generate(pattern: Pattern, count: usize, hw: (usize, usize), classes: usize, seed: u64) -> Result<Dataset> {
    let (h, w) = hw;
    if classes < 2 || classes > pattern.max_classes() {
        return Err(HycasError::Config(format!(
            "pattern supports 2..={} classes, got {classes}",
            pattern.max_classes()
        )));
    }
    if h < 2 || w < 2 {
        return Err(HycasError::Config(format!("image size {h}x{w} too small")));
    }
    let mut images = Vec::with_capacity(count * h * w);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let mut r = rng::rng_from(rng::derive(seed, &[i as u64]));
        let label = i % classes;
        let mut img = vec![0.0f64; h * w];
        match (pattern, label) {
            (Pattern::BlobStripe, 0) => {
                let ci = r.random_range(0.4..0.6) * (h - 1) as f64;
                let cj = r.random_range(0.4..0.6) * (w - 1) as f64;
                let s = r.random_range(0.9..1.6);
                for a in 0..h {
                    for b in 0..w {
                        let d2 = (a as f64 - ci).powi(2) + (b as f64 - cj).powi(2);
                        img[a * w + b] = (-d2 / (2.0 * s * s)).exp();
                    }
                }
            }
            (Pattern::BlobStripe, _) => {
                let horizontal = r.random_bool(0.5);
                let extent = if horizontal { h } else { w };
                let band = (extent / 4).max(1);
                let offset = r.random_range(0..band);
                let pos = if r.random_bool(0.5) { offset } else { extent - 1 - offset };
                for a in 0..h {
                    for b in 0..w {
                        let on = if horizontal { a == pos } else { b == pos };
                        img[a * w + b] = if on { 1.0 } else { 0.0 };
                    }
                }
            }
            (Pattern::Quadrant, k) => {
                for a in 0..h {
                    for b in 0..w {
                        let q = usize::from(a >= h / 2) * 2 + usize::from(b >= w / 2);
                        img[a * w + b] = if q == k { 0.8 } else { 0.0 };
                    }
                }
            }
        }
        let noise: Vec<f64> = rng::gaussian_vec(&mut r, h * w, PIXEL_NOISE);
        for (v, n) in img.iter().zip(noise) {
            images.push((BACKGROUND + CONTRAST * v + n).clamp(0.0, 1.0) as f32);
        }
        labels.push(label as u32);
    }
    Dataset::new((h, w, 1), classes, images, labels)
}
