mod common;

use leaky_rbm::experiments::{mixing, MixingSettings};
use leaky_rbm::projection::is_globally_safe;
use leaky_rbm::rng::stream;
use leaky_rbm::training::{
    init_params, negative_chains, negative_phase, train, train_with, AnnealSettings, NegativeSampler, TrainConfig,
    TrainMonitor,
};
use leaky_rbm::{HiddenKind, RbmParams, Result};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn blob_data(n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = stream(seed, 0);
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            dvector![2.0 * z + 0.3 * e0, 1.5 * z + 0.3 * e1]
        })
        .collect()
}

struct SafetyMonitor {
    checked: usize,
}

impl TrainMonitor for SafetyMonitor {
    fn after_update(&mut self, _update: usize, params: &RbmParams) -> Result<()> {
        assert!(is_globally_safe(&params.weights).safe);
        self.checked += 1;
        Ok(())
    }
}

#[test]
fn projection_keeps_every_update_safe() {
    let data = blob_data(400, 1);
    let init = init_params(2, 3, 0.1, HiddenKind::LeakyRelu, 2).unwrap();
    for sampler in [NegativeSampler::Cd, NegativeSampler::LeakyAnneal, NegativeSampler::Mix] {
        let config = TrainConfig {
            cd_steps: 5,
            learning_rate: 0.05,
            epochs: 5,
            neg_sampler: sampler,
            ..TrainConfig::default()
        };
        let mut m = SafetyMonitor { checked: 0 };
        train_with(&init, &data, &config, &mut m).unwrap();
        assert_eq!(m.checked, 20);
    }
}

#[test]
fn training_is_deterministic_under_a_seed() {
    let data = blob_data(300, 3);
    let init = init_params(2, 4, 0.1, HiddenKind::LeakyRelu, 4).unwrap();
    let config = TrainConfig {
        cd_steps: 3,
        epochs: 3,
        neg_sampler: NegativeSampler::Mix,
        seed: 12,
        ..TrainConfig::default()
    };
    let (a, la) = train(&init, &data, &config).unwrap();
    let (b, lb) = train(&init, &data, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
}

#[test]
fn degenerate_mix_training_is_cd_training() {
    let data = blob_data(300, 5);
    let init = init_params(2, 4, 0.2, HiddenKind::LeakyRelu, 6).unwrap();
    let cd = TrainConfig {
        cd_steps: 4,
        epochs: 3,
        seed: 9,
        ..TrainConfig::default()
    };
    let mix = TrainConfig {
        neg_sampler: NegativeSampler::Mix,
        anneal: AnnealSettings {
            c_start: 0.2,
            ..AnnealSettings::default()
        },
        ..cd.clone()
    };
    assert_eq!(train(&init, &data, &cd).unwrap().0, train(&init, &data, &mix).unwrap().0);
}

#[test]
fn long_chain_negative_phase_matches_gaussian_moments() {
    let p = RbmParams::new(
        dmatrix![0.5, -0.3; 0.2, 0.6],
        dvector![0.1, -0.2],
        dvector![0.4, -0.3],
        1.0,
        HiddenKind::LeakyRelu,
    )
    .unwrap();
    let omega = DMatrix::identity(2, 2) - &p.weights * p.weights.transpose();
    let cov = omega.try_inverse().unwrap();
    let mu = &cov * (&p.visible_bias + &p.weights * &p.hidden_bias);
    let second = &cov + &mu * mu.transpose();
    let expected_w = &second * &p.weights + &mu * p.hidden_bias.transpose();
    let expected_b = p.weights.transpose() * &mu + &p.hidden_bias;

    let batch = vec![dvector![0.0, 0.0]; 20_000];
    let config = TrainConfig {
        cd_steps: 200,
        ..TrainConfig::default()
    };
    let est = negative_phase(&p, &batch, &config, 31).unwrap();
    let chains = negative_chains(&p, &batch, &config, 31).unwrap();
    let n = batch.len() as f64;
    for i in 0..2 {
        for j in 0..2 {
            let vals: Vec<f64> = chains
                .visible()
                .map(|v| v[i] * p.hidden_mean(v).unwrap()[j])
                .collect();
            let (m, sd) = leaky_rbm::stats::mean_sd(&vals);
            assert!((m - est.d_weights[(i, j)]).abs() < 1e-12);
            assert!((m - expected_w[(i, j)]).abs() < 4.0 * sd / n.sqrt(), "dW[{i},{j}] {m} vs {}", expected_w[(i, j)]);
        }
    }
    for j in 0..2 {
        let vals: Vec<f64> = chains.visible().map(|v| p.hidden_mean(v).unwrap()[j]).collect();
        let (m, sd) = leaky_rbm::stats::mean_sd(&vals);
        assert!((m - expected_b[j]).abs() < 4.0 * sd / n.sqrt());
    }
}

#[test]
fn gradient_estimator_matches_finite_differences() {
    let (rel_w, rel_b) = common::gradient_relative_errors(100_000, 8);
    assert!(rel_w < 0.02, "W block relative error {rel_w}");
    assert!(rel_b < 0.02, "b block relative error {rel_b}");
}

#[test]
fn oracle_likelihood_rises_over_the_first_epochs() {
    let settings = MixingSettings {
        epochs: 20,
        ..MixingSettings::default()
    };
    let rows = mixing(&settings, 0).unwrap();
    for method in [NegativeSampler::Cd, NegativeSampler::LeakyAnneal, NegativeSampler::Mix] {
        let curve: Vec<f64> = rows.iter().filter(|r| r.method == method).map(|r| r.loglik).collect();
        let stderr: Vec<f64> = rows.iter().filter(|r| r.method == method).map(|r| r.stderr).collect();
        assert_eq!(curve.len(), 20);
        // a drop counts as a plateau while it stays within two test-set standard errors
        for k in 1..curve.len() {
            assert!(curve[k] >= curve[k - 1] - 2.0 * stderr[k], "{}: {:?}", method.as_str(), curve);
        }
        assert!(curve[19] > curve[0], "{}: {:?}", method.as_str(), curve);
    }
}
