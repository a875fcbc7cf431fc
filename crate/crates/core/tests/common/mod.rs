#![allow(dead_code)]

use beliefnet::acquisition::RiParams;
use beliefnet::estimation::{self, CostObservation, RewardObservation};
use beliefnet::network::{validate_network, Network};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn network(n: usize, weights: &[f64]) -> Network {
    validate_network(DMatrix::from_row_slice(n, n, weights), false).unwrap()
}

/// Five agents on a ring with uneven, asymmetric weights.
pub fn five_agents() -> (Network, Vec<f64>) {
    #[rustfmt::skip]
    let w = [
        0.0, 0.5, 0.0, 0.0, 0.5,
        0.3, 0.0, 0.7, 0.0, 0.0,
        0.0, 0.4, 0.0, 0.6, 0.0,
        0.0, 0.0, 0.5, 0.0, 0.5,
        0.6, 0.0, 0.0, 0.4, 0.0,
    ];
    (network(5, &w), vec![0.02, 0.05, 0.1, 0.15, 0.08])
}

/// A precise agent listening to a chain whose uncertainty reaches it late.
pub fn rising_variance_fixture() -> (Network, Vec<f64>) {
    #[rustfmt::skip]
    let w = [
        0.0, 1.0, 0.0,
        0.0, 0.0, 1.0,
        0.0, 1.0, 0.0,
    ];
    (network(3, &w), vec![0.01, 0.18, 0.18])
}

/// Posterior mean and variance of a Gaussian prior times a Gaussian
/// likelihood, by trapezoidal quadrature on a uniform grid.
pub fn quadrature_posterior(pi: f64, sigma2: f64, eta: f64, sigma2_y: f64) -> (f64, f64) {
    let wide = sigma2.max(sigma2_y).sqrt();
    let (lo, hi) = (pi.min(eta) - 12.0 * wide, pi.max(eta) + 12.0 * wide);
    let points = 40_001;
    let dx = (hi - lo) / (points - 1) as f64;
    let log_density = |x: f64| -(x - pi).powi(2) / (2.0 * sigma2) - (x - eta).powi(2) / (2.0 * sigma2_y);
    let xs: Vec<f64> = (0..points).map(|k| lo + k as f64 * dx).collect();
    let peak = xs.iter().map(|&x| log_density(x)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1) = (0.0, 0.0);
    let ws: Vec<f64> = xs.iter().map(|&x| (log_density(x) - peak).exp()).collect();
    for (k, (&x, &w)) in xs.iter().zip(&ws).enumerate() {
        let edge = if k == 0 || k == points - 1 { 0.5 } else { 1.0 };
        z += edge * w;
        m1 += edge * w * x;
    }
    let mean = m1 / z;
    let mut m2 = 0.0;
    for (k, (&x, &w)) in xs.iter().zip(&ws).enumerate() {
        let edge = if k == 0 || k == points - 1 { 0.5 } else { 1.0 };
        m2 += edge * w * (x - mean).powi(2);
    }
    (mean, m2 / z)
}

/// Maximize expected utility by a log-spaced scan over [1e-8, 1e8]
/// followed by repeated local refinement.
pub fn utility_argmax(p: &RiParams) -> f64 {
    let f = |x: f64| -p.r * x - p.a * x.powf(-p.b);
    let coarse = 4000;
    let mut best = 1e-8;
    let mut best_val = f64::NEG_INFINITY;
    for k in 0..=coarse {
        let x = 10f64.powf(-8.0 + 16.0 * k as f64 / coarse as f64);
        if f(x) > best_val {
            best_val = f(x);
            best = x;
        }
    }
    let step = 10f64.powf(16.0 / coarse as f64);
    let (mut lo, mut hi) = (best / step, best * step);
    for _ in 0..40 {
        let n = 200;
        let mut val = f64::NEG_INFINITY;
        for k in 0..=n {
            let x = lo + (hi - lo) * k as f64 / n as f64;
            if f(x) > val {
                val = f(x);
                best = x;
            }
        }
        let h = (hi - lo) / n as f64;
        lo = (best - 2.0 * h).max(f64::MIN_POSITIVE);
        hi = best + 2.0 * h;
    }
    best
}

fn noisy_variance(rng: &mut ChaCha8Rng, theta: f64, variance: f64, reports: usize) -> f64 {
    let d = Normal::new(theta, variance.sqrt()).unwrap();
    let xs: Vec<f64> = (0..reports).map(|_| d.sample(rng)).collect();
    estimation::sample_variance(&xs).unwrap()
}

/// End to end on synthetic subjects: fit the cost curve from noisy
/// reports at several costs, learn one accuracy weight per reward level
/// from a training group, then predict a test group's report variance.
/// Returns the mean relative prediction error.
pub fn synthetic_reward_pipeline(seed: u64, reports: usize) -> f64 {
    let (a, b) = (2.0, 0.5);
    let theta = 0.6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let costs: Vec<CostObservation> = [0.01, 0.02, 0.04, 0.08, 0.16]
        .iter()
        .map(|&v| CostObservation {
            cost: a * f64::powf(v, -b),
            variance: noisy_variance(&mut rng, theta, v, reports),
            count: reports as u64,
        })
        .collect();
    let fit = estimation::fit_cost_power_law(&costs, false).unwrap();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (reward, r) in [(1.0, 5.0), (2.0, 10.0), (5.0, 25.0), (10.0, 60.0)] {
        let v = estimation::predict_variance(r, a, b).unwrap();
        // subjects are shuffled into the two groups at random
        let (mut n_train, mut n_test) = (0, 0);
        for _ in 0..2 * reports {
            if rng.random_bool(0.5) {
                n_train += 1
            } else {
                n_test += 1
            }
        }
        train.push(RewardObservation { reward, variance: noisy_variance(&mut rng, theta, v, n_train) });
        test.push(RewardObservation { reward, variance: noisy_variance(&mut rng, theta, v, n_test) });
    }
    let estimates = estimation::estimate_rewards(&train, fit.a, fit.b).unwrap();
    estimation::evaluate_rewards(&estimates, &test).unwrap()
}
