use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use leaky_rbm::experiments::random_leaky_model;
use leaky_rbm::parallel::{map_indexed, map_indexed_serial};
use leaky_rbm::rng::stream;
use leaky_rbm::sampler::{gibbs_step_with, Kernel};
use leaky_rbm::{GibbsState, RbmParams};
use nalgebra::DVector;

fn run_chain(params: &RbmParams, idx: usize, sweeps: usize) -> f64 {
    let mut rng = stream(7, idx as u64);
    let mut state = GibbsState::from_visible(DVector::zeros(params.num_visible()), params.num_hidden());
    for _ in 0..sweeps {
        state = gibbs_step_with(params, &state, &mut rng, Kernel::Corrected).unwrap();
    }
    state.v.sum()
}

fn chains(c: &mut Criterion) {
    let params = random_leaky_model(64, 16, 0.9, 0.1, 1).unwrap();
    let mut group = c.benchmark_group("gibbs_chains");
    group.sample_size(10);
    for n in [64usize, 512] {
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, &n| {
            b.iter(|| map_indexed(n, |i| run_chain(&params, i, 20)))
        });
        group.bench_with_input(BenchmarkId::new("serial", n), &n, |b, &n| {
            b.iter(|| map_indexed_serial(n, |i| run_chain(&params, i, 20)))
        });
    }
    group.finish();
}

criterion_group!(benches, chains);
criterion_main!(benches);
