//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use leaky_rbm::partition::quadrature_log_z;
use leaky_rbm::rng::stream;
use leaky_rbm::sampler::{anneal_leakiness_sample, AnnealSchedule};
use leaky_rbm::training::{expected_statistics, positive_phase};
use leaky_rbm::{HiddenKind, RbmParams};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Mean log-likelihood of `data` with the quadrature normalizer.
pub fn exact_mean_log_likelihood(p: &RbmParams, data: &[DVector<f64>]) -> f64 {
    let log_z = quadrature_log_z(p, None, 1e-12).unwrap();
    data.iter().map(|v| p.log_unnorm_marginal(v).unwrap()).sum::<f64>() / data.len() as f64 - log_z
}

pub fn gradient_toy() -> (RbmParams, Vec<DVector<f64>>) {
    let p = RbmParams::new(
        dmatrix![0.5, -0.3; 0.2, 0.6],
        DVector::zeros(2),
        dvector![0.4, -0.3],
        0.2,
        HiddenKind::LeakyRelu,
    )
    .unwrap();
    let mut rng = stream(2024, 0);
    let data = (0..500)
        .map(|_| {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            dvector![1.0 + 0.5 * z0, -1.0 + 0.5 * z1]
        })
        .collect();
    (p, data)
}

/// Central finite differences of the exact mean log-likelihood in `W` and `b`.
pub fn finite_difference_gradient(p: &RbmParams, data: &[DVector<f64>]) -> (DMatrix<f64>, DVector<f64>) {
    let h = 1e-5;
    let f = |q: &RbmParams| exact_mean_log_likelihood(q, data);
    let mut gw = DMatrix::zeros(p.num_visible(), p.num_hidden());
    for i in 0..p.num_visible() {
        for j in 0..p.num_hidden() {
            let mut plus = p.clone();
            plus.weights[(i, j)] += h;
            let mut minus = p.clone();
            minus.weights[(i, j)] -= h;
            gw[(i, j)] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    let mut gb = DVector::zeros(p.num_hidden());
    for j in 0..p.num_hidden() {
        let mut plus = p.clone();
        plus.hidden_bias[j] += h;
        let mut minus = p.clone();
        minus.hidden_bias[j] -= h;
        gb[j] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    (gw, gb)
}

/// Relative errors (W block, b block) of the positive-minus-negative
/// estimator with `chains` long annealed chains against finite differences.
pub fn gradient_relative_errors(chains: usize, seed: u64) -> (f64, f64) {
    let (p, data) = gradient_toy();
    let (gw, gb) = finite_difference_gradient(&p, &data);
    let samples = anneal_leakiness_sample(&p, &AnnealSchedule::new(p.leakiness, 100), chains, seed).unwrap();
    let est = positive_phase(&p, &data).unwrap().sub(&expected_statistics(&p, samples.visible()).unwrap());
    (
        (&est.d_weights - &gw).norm() / gw.norm(),
        (&est.d_hidden_bias - &gb).norm() / gb.norm(),
    )
}
