use crate::rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Per-forward randomness: random-projection seed, RANI seed and an optional additive input
/// draw. Equal states give bit-identical outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseState<S> {
    pub psi_seed: u64,
    pub omega_seed: u64,
    pub epsilon: Option<Tensor<S>>,
}

impl<S: Real> NoiseState<S> {
    pub fn new(psi_seed: u64, omega_seed: u64) -> Self {
        Self { psi_seed, omega_seed, epsilon: None }
    }

    /// Draw `counter` of the stream rooted at `seed`.
    pub fn derive(seed: u64, counter: u64) -> Self {
        Self::new(
            rng::derive(seed, &[counter, rng::tag("psi")]),
            rng::derive(seed, &[counter, rng::tag("omega")]),
        )
    }

    /// Attaches an `N(0, sigma^2)` input draw of the given shape, seeded from `seed`.
    pub fn with_gaussian_input(mut self, sigma: f64, shape: &[usize], seed: u64) -> Self {
        let len = shape.iter().product();
        let data = rng::gaussian_vec(&mut rng::rng_from(seed), len, sigma);
        self.epsilon = Some(Tensor::new(shape, data).expect("extent product matches"));
        self
    }
}
