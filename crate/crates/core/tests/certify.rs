mod common;

use common::{cp_oracle, gaussian, quantile_oracle, random_tensor, rng, tensor, Linear};
use hycas::block::{HycasNetwork, NetworkConfig};
use hycas::certify::{
    certify_batch, choose, clopper_pearson_lower, expected_logits, gauss_cdf, inv_gauss_cdf, lip_certify,
    margin_certificate, margin_certificate_lcb, rs_certify, BoundMode, Certificate, LipMode, McConfig, Method,
};
use hycas::model::Classifier;
use hycas::streams::NoiseState;
use hycas::tensor::Tensor;
use hycas::HycasError;
use rand::Rng;

#[test]
fn quantile_examples() {
    assert_eq!(inv_gauss_cdf(0.5).unwrap(), 0.0);
    let q = inv_gauss_cdf(0.975).unwrap();
    assert!((q - quantile_oracle(0.975)).abs() < 1e-5);
    assert!((q - 1.959964).abs() < 1e-5);
    for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
        assert!(inv_gauss_cdf(p).is_err());
    }
    for p in [1e-10, 1e-4, 0.02, 0.3, 0.7, 0.99, 1.0 - 1e-9] {
        let x = inv_gauss_cdf(p).unwrap();
        assert!((gauss_cdf(x) - p).abs() <= 1e-12 * p.max(1e-3), "p = {p}");
        if 1.0 - (1.0 - p) == p {
            assert_eq!(inv_gauss_cdf(1.0 - p).unwrap(), -x);
        }
    }
}

#[test]
fn clopper_pearson_examples() {
    assert_eq!(clopper_pearson_lower(0, 50, 0.01).unwrap(), 0.0);
    for (n, alpha) in [(1u64, 0.05), (10, 0.001), (100, 0.001), (100_000, 0.001)] {
        let got = clopper_pearson_lower(n, n, alpha).unwrap();
        assert!((got - alpha.powf(1.0 / n as f64)).abs() < 1e-12);
    }
    let got = clopper_pearson_lower(99, 100, 0.001).unwrap();
    assert!((got - cp_oracle(99, 100, 0.001)).abs() < 1e-9, "{got}");
    assert!(clopper_pearson_lower(5, 4, 0.1).is_err());
    assert!(clopper_pearson_lower(1, 4, 0.0).is_err());
}

#[test]
fn clopper_pearson_matches_binomial_tail_oracle() {
    let mut r = rng(6);
    for _ in 0..200 {
        let n = r.random_range(1..=1000u64);
        let m = r.random_range(0..=n);
        let alpha = 10f64.powf(r.random_range(-4.0..-0.5));
        let got = clopper_pearson_lower(m, n, alpha).unwrap();
        let want = if m == 0 { 0.0 } else { cp_oracle(m, n, alpha) };
        assert!((got - want).abs() < 1e-9, "m={m} n={n} alpha={alpha}: {got} vs {want}");
    }
}

#[test]
fn margin_examples() {
    let c = margin_certificate(&[1.0, 0.0], 16).unwrap();
    assert_eq!((c.label, c.radius_l2, c.abstain), (0, 0.25, false));
    assert_eq!(c.radius_linf, 0.0625);
    assert_eq!(c.method, Method::LipMargin);
    let c = margin_certificate(&[0.1, 0.5, 0.1], 4).unwrap();
    assert_eq!(c.label, 1);
    assert!((c.radius_l2 - 0.1).abs() < 1e-15);
    let tie = margin_certificate(&[0.3, 0.3, -1.0], 4).unwrap();
    assert!(tie.abstain);
    assert_eq!(tie.radius_l2, 0.0);
    assert!(margin_certificate(&[1.0], 4).is_err());
}

#[test]
fn confidence_margin_examples() {
    let same = vec![vec![1.0, 0.2, -0.5]; 10];
    let c = margin_certificate_lcb(&same, 0.01, 9, BoundMode::StudentT).unwrap();
    assert_eq!(c, Certificate { confidence: c.confidence, ..margin_certificate(&same[0], 9).unwrap() });
    assert!(c.radius_l2 > 0.0);
    // overlapping bounds
    let noisy: Vec<Vec<f64>> = (0..6).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0]).collect();
    let c = margin_certificate_lcb(&noisy, 0.01, 4, BoundMode::StudentT).unwrap();
    assert!(c.abstain);
    assert!(margin_certificate_lcb(&same[..1], 0.01, 9, BoundMode::StudentT).is_err());
}

#[test]
fn confidence_margins_cover_the_true_margin() {
    let means = [1.0, 0.6, 0.0];
    let true_margin = means[0] - means[1];
    let alpha = 0.05;
    let mut r = rng(7);
    let trials = 10_000;
    let mut covered = 0;
    for _ in 0..trials {
        let samples: Vec<Vec<f64>> =
            (0..32).map(|_| gaussian(&mut r, 3).iter().zip(&means).map(|(z, m)| m + 0.5 * z).collect()).collect();
        let c = margin_certificate_lcb(&samples, alpha, 4, BoundMode::StudentT).unwrap();
        if c.abstain || (c.label == 0 && 4.0 * c.radius_l2 <= true_margin) {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    assert!(rate >= 1.0 - alpha, "coverage {rate}");
}

#[test]
fn expected_logits_of_a_deterministic_model_are_its_logits() {
    let m = Linear::halfspace([2, 2, 1], 1.5);
    let x = random_tensor(&[3, 2, 2, 1], 8);
    let z = m.logits(&x, &NoiseState::new(0, 0)).unwrap();
    for samples in [1, 7, 64] {
        assert_eq!(expected_logits(&m, &x, samples, 9).unwrap(), z);
    }
}

fn toy_network(seed: u64) -> HycasNetwork<f64> {
    let mut net =
        HycasNetwork::new(NetworkConfig { input_hw: (4, 4), channels: vec![2], seed, ..Default::default() }).unwrap();
    net.calibrate().unwrap();
    net
}

#[test]
fn expected_logits_are_reproducible_and_concentrate() {
    let net = toy_network(1);
    let x = random_tensor(&[1, 4, 4, 1], 10);
    assert_eq!(expected_logits(&net, &x, 16, 3).unwrap(), expected_logits(&net, &x, 16, 3).unwrap());
    let spread = |samples: usize| {
        let zs: Vec<f64> = (0..40).map(|s| expected_logits(&net, &x, samples, 100 + s).unwrap().data()[0]).collect();
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (zs.len() - 1) as f64).sqrt()
    };
    let (small, large) = (spread(4), spread(64));
    // four times the standard error in theory
    let ratio = small / large;
    assert!(ratio > 2.0 && ratio < 8.0, "{small} / {large}");
}

#[test]
fn randomized_smoothing_on_a_halfspace() {
    let m = Linear::halfspace([2, 2, 1], 1.0);
    let sigma = 0.25;
    let mut x = Tensor::<f64>::zeros(&[1, 2, 2, 1]);
    x.data_mut()[0] = 0.3;
    let cfg = McConfig { n0: 100, n: 5000, alpha: 0.001, sigma, lip_mode: LipMode::Frozen };
    let c = rs_certify(&m, &x, &cfg, 11).unwrap();
    assert_eq!(c.label, 1);
    assert!(!c.abstain);
    assert!(c.radius_l2 <= 0.3 && c.radius_l2 > 0.15, "{}", c.radius_l2);
    assert_eq!(c.radius_linf, c.radius_l2 / 2.0);
    assert_eq!(c, rs_certify(&m, &x, &cfg, 11).unwrap());
    x.data_mut()[0] = -0.3;
    assert_eq!(rs_certify(&m, &x, &cfg, 11).unwrap().label, 0);
    // sigma * Phi^{-1}(Phi(1)) = sigma
    assert!((sigma * inv_gauss_cdf(gauss_cdf(1.0)).unwrap() - 0.25).abs() < 1e-12);
}

/// Predicts the parity of its internal noise seed, ignoring the input.
struct Coin;

impl Classifier<f64> for Coin {
    type Draw = usize;
    fn num_classes(&self) -> usize {
        2
    }
    fn input_shape(&self) -> [usize; 3] {
        [1, 1, 1]
    }
    fn draw(&self, noise: &NoiseState<f64>) -> hycas::Result<usize> {
        Ok((noise.psi_seed & 1) as usize)
    }
    fn logits_drawn(&self, x: &Tensor<f64>, bit: &usize) -> hycas::Result<Tensor<f64>> {
        let n = x.shape()[0];
        let row = if *bit == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
        Tensor::new(&[n, 2], row.repeat(n))
    }
}

#[test]
fn a_fair_coin_is_never_certified() {
    let x = Tensor::zeros(&[1, 1, 1, 1]);
    for n in [100, 2000, 100_000] {
        let cfg = McConfig { n0: 50, n, ..McConfig::default() };
        for seed in 0..3 {
            let c = rs_certify(&Coin, &x, &cfg, seed).unwrap();
            assert!(c.abstain && c.radius_l2 == 0.0, "n = {n}");
        }
    }
}

#[test]
fn choose_examples() {
    let cert = |r: f64, method| Certificate {
        label: 0,
        radius_l2: r,
        radius_linf: r,
        method,
        abstain: r == 0.0,
        confidence: 1.0,
    };
    assert_eq!(choose(&cert(0.3, Method::Rs), &cert(0.1, Method::LipMargin)).method, Method::Rs);
    assert_eq!(choose(&cert(0.1, Method::Rs), &cert(0.3, Method::LipMargin)).method, Method::LipMargin);
    assert_eq!(choose(&cert(0.2, Method::Rs), &cert(0.2, Method::LipMargin)).method, Method::Rs);
    let both = choose(&cert(0.0, Method::Rs), &cert(0.0, Method::LipMargin));
    assert!(both.abstain && both.radius_l2 == 0.0);
}

#[test]
fn margin_branch_needs_a_calibrated_network() {
    let mut net = HycasNetwork::<f64>::new(NetworkConfig { input_hw: (4, 4), channels: vec![2], ..Default::default() }).unwrap();
    let x = random_tensor(&[1, 4, 4, 1], 12);
    assert!(matches!(lip_certify(&net, &x, &NoiseState::new(0, 0)), Err(HycasError::InvalidModel(_))));
    net.calibrate().unwrap();
    assert!(lip_certify(&net, &x, &NoiseState::new(0, 0)).is_ok());
    let m = Linear::halfspace([4, 4, 1], 1.0);
    let cfg = McConfig { n: 200, ..McConfig::default() };
    assert!(certify_batch(&m, &x, &[0], &cfg, 0).is_err());
}

#[test]
fn certificates_are_reproducible_and_independent_of_batching() {
    let net = toy_network(2);
    let xs = random_tensor(&[4, 4, 4, 1], 13).map(|v| 0.5 + 0.2 * v);
    let ids = [0, 1, 2, 3];
    for lip_mode in [LipMode::Frozen, LipMode::ExpectedLcb { samples: 8 }] {
        let cfg = McConfig { n0: 20, n: 200, alpha: 0.01, sigma: 0.25, lip_mode };
        let all = certify_batch(&net, &xs, &ids, &cfg, 5).unwrap();
        assert_eq!(all, certify_batch(&net, &xs, &ids, &cfg, 5).unwrap());
        for i in [1, 3] {
            let one = certify_batch(&net, &xs.batch_item(i).unwrap(), &[i as u64], &cfg, 5).unwrap();
            if lip_mode == LipMode::Frozen {
                assert_eq!(one[0], all[i]);
            } else {
                assert_eq!(one[0].rs, all[i].rs);
            }
        }
    }
}

#[test]
fn invalid_sampling_configurations_are_rejected() {
    let m = Linear::halfspace([1, 1, 1], 1.0);
    let x = tensor(&[1, 1, 1, 1], vec![0.2]);
    for cfg in [
        McConfig { n0: 0, ..McConfig::default() },
        McConfig { n0: 10, n: 5, ..McConfig::default() },
        McConfig { alpha: 1.0, ..McConfig::default() },
        McConfig { sigma: -1.0, ..McConfig::default() },
    ] {
        assert!(rs_certify(&m, &x, &cfg, 0).is_err());
    }
}
