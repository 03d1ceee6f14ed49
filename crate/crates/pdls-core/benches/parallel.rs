//! Compares the data-parallel agent loop against the sequential
//! fallback on the two hot per-iteration kernels: a round of
//! prox-gradient trials and a neighbor exchange.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use pdls_core::graph::{MixingMatrix, Topology};
use pdls_core::netsim::Network;
use pdls_core::operators::{prox_nonneg, Quadratic, SmoothOracle};
use pdls_core::par;

fn setup(n: usize, d: usize) -> (Vec<Arc<dyn SmoothOracle>>, Vec<DVector<f64>>, MixingMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let oracles: Vec<Arc<dyn SmoothOracle>> = (0..n)
        .map(|_| {
            let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            let q = &a * a.transpose() + DMatrix::identity(d, d);
            let b = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            Arc::new(Quadratic::new(q, b)) as Arc<dyn SmoothOracle>
        })
        .collect();
    let xs = (0..n)
        .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let mixing = MixingMatrix::metropolis(Topology::random_geometric(n, 1)).unwrap();
    (oracles, xs, mixing)
}

fn trial_round(oracles: &[Arc<dyn SmoothOracle>], xs: &[DVector<f64>], tau: f64, parallel: bool) -> f64 {
    let step = |i: usize| {
        let g = oracles[i].gradient(&xs[i]);
        let x_next = prox_nonneg(tau, &(&xs[i] - g * tau));
        let dx = &x_next - &xs[i];
        oracles[i].value(&x_next) - oracles[i].value(&xs[i]) - dx.norm_squared()
    };
    let slacks = if parallel {
        par::map_agents(oracles.len(), step)
    } else {
        par::map_agents_seq(oracles.len(), step)
    };
    slacks.iter().sum()
}

fn bench_trial_round(c: &mut Criterion) {
    let mut group = c.benchmark_group("prox_grad_trial_round");
    for &(n, d) in &[(8usize, 64usize), (32, 64), (32, 256)] {
        let (oracles, xs, _) = setup(n, d);
        group.bench_with_input(BenchmarkId::new("parallel", format!("n{n}_d{d}")), &(), |b, _| {
            b.iter(|| trial_round(&oracles, &xs, 0.1, true))
        });
        group.bench_with_input(BenchmarkId::new("sequential", format!("n{n}_d{d}")), &(), |b, _| {
            b.iter(|| trial_round(&oracles, &xs, 0.1, false))
        });
    }
    group.finish();
}

fn bench_neighbor_mix(c: &mut Criterion) {
    let mut group = c.benchmark_group("neighbor_mix");
    for &(n, d) in &[(16usize, 256usize), (64, 1024)] {
        let (_, xs, mixing) = setup(n, d);
        let payload = DMatrix::from_fn(n, d, |i, j| xs[i][j]);
        group.bench_with_input(BenchmarkId::from_parameter(format!("n{n}_d{d}")), &(), |b, _| {
            let mut net = Network::new(n);
            b.iter(|| net.neighbor_mix(&mixing, &payload).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_trial_round, bench_neighbor_mix);
criterion_main!(benches);
