use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use twl_bench::{collection, shallow_pair, uniform};
use twl_core::conditions::{energy_constant, full_depth, EnergyForm};
use twl_core::haar::analyze;
use twl_core::kernel::{KernelFamily, KernelSpec};
use twl_core::lab::commands::random_function;
use twl_core::lab::{trial_rng, Profile, RunConfig};
use twl_core::operator::{kernel_matrices, operator_norm, Direction};
use twl_core::stopping_form::{size_lemma_decompose, stopping_form_norm};
use twl_core::Located;

fn kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel_matrices");
    for profile in Profile::defaults() {
        let (sigma, omega) = uniform(profile.n, 64);
        let k = profile.kernel_spec().unwrap();
        group.bench_function(BenchmarkId::from_parameter(&profile.name), |b| {
            b.iter(|| kernel_matrices(black_box(&sigma), black_box(&omega), &k).unwrap())
        });
    }
    group.finish();
}

fn norms(c: &mut Criterion) {
    let mut group = c.benchmark_group("operator_norm");
    let k = KernelSpec::new(KernelFamily::Hilbert, 1, 0.0).unwrap();
    for atoms in [16, 64] {
        let (sigma, omega) = uniform(1, atoms);
        group.bench_with_input(BenchmarkId::from_parameter(atoms), &atoms, |b, _| {
            b.iter(|| operator_norm(black_box(&sigma), black_box(&omega), &k).unwrap())
        });
    }
    group.finish();
}

fn haar(c: &mut Criterion) {
    let mut group = c.benchmark_group("haar_analyze");
    let grid_params = RunConfig::default().deep;
    for n in [1, 2] {
        let (sigma, _) = uniform(n, 64);
        let loc = Located::new(&grid_params.grid(n).unwrap(), &sigma).unwrap();
        let f = random_function(&mut trial_rng(1, "bench/f", n), sigma.len());
        group.bench_with_input(BenchmarkId::new("n", n), &n, |b, _| b.iter(|| analyze(&loc, black_box(&f), None)));
    }
    group.finish();
}

fn energy(c: &mut Criterion) {
    let mut group = c.benchmark_group("energy_dp");
    group.sample_size(20);
    for (n, alpha) in [(1, 0.0), (2, 0.5)] {
        let pair = shallow_pair(n, 10).unwrap();
        let depth = full_depth(&pair.grid);
        group.bench_with_input(BenchmarkId::new("n", n), &n, |b, _| {
            b.iter(|| energy_constant(black_box(&pair), alpha, Direction::Forward, depth, EnergyForm::Theorem).unwrap())
        });
    }
    group.finish();
}

fn size_lemma(c: &mut Criterion) {
    let mut group = c.benchmark_group("size_lemma");
    group.sample_size(20);
    for profile in Profile::defaults() {
        let (pair, p) = collection(&profile, 40).unwrap();
        let k = profile.kernel_spec().unwrap();
        group.bench_function(BenchmarkId::new("decompose", &profile.name), |b| {
            b.iter(|| size_lemma_decompose(black_box(&p), &pair, profile.alpha, 0.5).unwrap())
        });
        group.bench_function(BenchmarkId::new("stopping_norm", &profile.name), |b| {
            b.iter(|| stopping_form_norm(black_box(&p), &pair, &k).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kernels, norms, haar, energy, size_lemma);
criterion_main!(benches);
