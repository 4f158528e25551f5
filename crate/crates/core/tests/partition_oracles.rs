//! Cross-checks of the partition-function oracles and AIS estimators.

use leaky_rbm::experiments::orthogonal_model;
use leaky_rbm::partition::{
    ais_estimate, exact_log_z_orthogonal, gaussian_log_z, intermediate_log_density, quadrature_log_z, AnnealingPath,
    PathKind,
};
use leaky_rbm::rng::{derive_seed, stream};
use leaky_rbm::stats::{log_mean_exp, mean_sd};
use leaky_rbm::{HiddenKind, RbmParams};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::Rng;

fn toy_nonorthogonal() -> RbmParams {
    RbmParams::new(
        dmatrix![0.5, -0.4; 0.3, 0.45],
        DVector::zeros(2),
        dvector![0.3, -0.5],
        0.2,
        HiddenKind::LeakyRelu,
    )
    .unwrap()
}

#[test]
fn single_column_example_matches_hand_formula_and_quadrature() {
    let p = RbmParams::leaky(dmatrix![0.6; 0.0], dvector![0.0], 0.1).unwrap();
    let hand = (0.5 * 2.0 * std::f64::consts::PI * ((1.0f64 - 0.36).powf(-0.5) + (1.0f64 - 0.036).powf(-0.5))).ln();
    let exact = exact_log_z_orthogonal(&p).unwrap();
    let quad = quadrature_log_z(&p, None, 1e-10).unwrap();
    assert!((exact - hand).abs() < 1e-12);
    assert!(((quad - exact) / exact).abs() < 1e-6, "{quad} vs {exact}");
}

#[test]
fn orthogonal_oracle_matches_quadrature_on_planar_cases() {
    let mut rng = stream(17, 0);
    for c in [0.01, 0.1, 0.5, 1.0] {
        for j in [1usize, 2] {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let norms: Vec<f64> = (0..j).map(|_| rng.random_range(0.1..0.95)).collect();
            let w = DMatrix::from_fn(2, j, |i, k| {
                let t = theta + k as f64 * std::f64::consts::FRAC_PI_2;
                norms[k] * if i == 0 { t.cos() } else { t.sin() }
            });
            let p = RbmParams::leaky(w, DVector::zeros(j), c).unwrap();
            let exact = exact_log_z_orthogonal(&p).unwrap();
            let quad = quadrature_log_z(&p, None, 1e-10).unwrap();
            assert!(((quad - exact) / exact).abs() < 1e-6, "c {c} J {j}: {quad} vs {exact}");
        }
    }
}

#[test]
fn unsafe_weights_make_quadrature_diverge() {
    let p = RbmParams::leaky(dmatrix![1.5; 0.0], dvector![0.0], 0.1).unwrap();
    assert!(matches!(quadrature_log_z(&p, None, 1e-8), Err(leaky_rbm::Error::Divergent { .. })));
}

#[test]
fn path_endpoints_are_base_and_target() {
    let p = toy_nonorthogonal();
    let mut rng = stream(3, 0);
    for _ in 0..50 {
        let v = dvector![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let target = p.log_unnorm_marginal(&v).unwrap();
        let base_energy = -0.5 * v.norm_squared();
        let c_one = p.with_leakiness(1.0).unwrap().log_unnorm_marginal(&v).unwrap();
        assert!((intermediate_log_density(PathKind::Energy, 1.0, &p, &v) - base_energy).abs() < 1e-12);
        assert!((intermediate_log_density(PathKind::Energy, 0.0, &p, &v) - target).abs() < 1e-12);
        assert!((intermediate_log_density(PathKind::Leaky, 1.0, &p, &v) - c_one).abs() < 1e-12);
        assert!((intermediate_log_density(PathKind::Leaky, p.leakiness, &p, &v) - target).abs() < 1e-12);
        assert!((intermediate_log_density(PathKind::OneSided, 1.0, &p, &v) - c_one).abs() < 1e-12);
        assert!((intermediate_log_density(PathKind::OneSided, 0.0, &p, &v) - target).abs() < 1e-12);
    }
}

#[test]
fn one_sided_level_equals_leaky_level() {
    let mut p = toy_nonorthogonal();
    p.hidden_bias = DVector::zeros(2);
    let mut rng = stream(4, 0);
    for _ in 0..50 {
        let beta: f64 = rng.random_range(0.0..1.0);
        let c_prime = beta + (1.0 - beta) * p.leakiness;
        let v = dvector![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let a = intermediate_log_density(PathKind::OneSided, beta, &p, &v);
        let b = intermediate_log_density(PathKind::Leaky, c_prime, &p, &v);
        assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn ais_matches_quadrature_on_planar_toy() {
    let p = toy_nonorthogonal();
    let truth = quadrature_log_z(&p, None, 1e-10).unwrap();
    for (k, kind) in [PathKind::Energy, PathKind::Leaky, PathKind::OneSided].into_iter().enumerate() {
        let path = AnnealingPath::uniform(kind, p.leakiness, 200);
        let est = ais_estimate(&p, &path, 2000, 40 + k as u64).unwrap();
        assert!(
            (est.log_z - truth).abs() < 3.0 * est.standard_error.max(1e-3),
            "{}: {} +- {} vs {truth}",
            kind.as_str(),
            est.log_z,
            est.standard_error
        );
        assert_eq!(est.dropped, 0);
        assert!(est.effective_sample_size > 0.0 && est.effective_sample_size <= 2000.0);
        let recombined = est.log_z0 + log_mean_exp(&est.log_weights);
        assert!((recombined - est.log_z).abs() < 1e-12);
    }
}

#[test]
fn ais_is_exact_at_c_one() {
    let mut p = toy_nonorthogonal();
    p.leakiness = 1.0;
    p.visible_bias = dvector![0.2, -0.1];
    let truth = gaussian_log_z(&p).unwrap();
    for kind in [PathKind::Leaky, PathKind::OneSided, PathKind::Energy] {
        let est = ais_estimate(&p, &AnnealingPath::uniform(kind, 1.0, 50), 500, 9).unwrap();
        assert!(
            (est.log_z - truth).abs() <= 3.0 * est.standard_error + 1e-10,
            "{}: {} +- {} vs {truth}",
            kind.as_str(),
            est.log_z,
            est.standard_error
        );
    }
}

#[test]
fn ais_is_unbiased_in_the_z_domain() {
    let p = toy_nonorthogonal();
    let truth = quadrature_log_z(&p, None, 1e-10).unwrap();
    let path = AnnealingPath::uniform(PathKind::Leaky, p.leakiness, 20);
    // ratios Z_hat / Z keep the numbers O(1)
    let ratios: Vec<f64> = (0..50)
        .map(|r| (ais_estimate(&p, &path, 100, derive_seed(77, r)).unwrap().log_z - truth).exp())
        .collect();
    let (mean, sd) = mean_sd(&ratios);
    let se = sd / (ratios.len() as f64).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * se, "mean ratio {mean} +- {se}");
}

#[test]
fn doubling_levels_does_not_increase_bias() {
    let p = orthogonal_model(16, 6, 0.9, 0.01, 5).unwrap();
    let exact = exact_log_z_orthogonal(&p).unwrap();
    let mut previous: Option<(f64, f64)> = None;
    for levels in [10, 20, 40, 80] {
        let path = AnnealingPath::uniform(PathKind::Energy, p.leakiness, levels);
        let biases: Vec<f64> = (0..10)
            .map(|r| (ais_estimate(&p, &path, 200, derive_seed(levels as u64, r)).unwrap().log_z - exact).abs())
            .collect();
        let (m, sd) = mean_sd(&biases);
        let se = sd / (biases.len() as f64).sqrt();
        if let Some((pm, pse)) = previous {
            assert!(m <= pm + 3.0 * (se * se + pse * pse).sqrt(), "K = {levels}: {m} after {pm}");
        }
        previous = Some((m, se));
    }
}
