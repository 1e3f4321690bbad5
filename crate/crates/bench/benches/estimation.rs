use std::hint::black_box;

use addt_core::bootstrap::{resample_and_refit, BootstrapOptions};
use addt_core::bspline::{default_spec, design_matrix};
use addt_core::dataset::StressSet;
use addt_core::fit::{fit_given_beta, profile_fit, FitControls, KnotPolicy};
use addt_core::simulation::{generate_spline_data, recovery_scenario};
use addt_core::AddtDataset;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset(levels: usize, times: usize) -> (AddtDataset, StressSet) {
    let sc = recovery_scenario(levels, times).unwrap();
    let data = generate_spline_data(&sc, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let stresses = StressSet::new(&data, sc.kelvin_offset).unwrap();
    (data, stresses)
}

fn policy() -> KnotPolicy {
    KnotPolicy::Adaptive {
        degree: 2,
        n_interior: 3,
    }
}

fn bench_design(c: &mut Criterion) {
    let (data, st) = dataset(6, 15);
    let spec = default_spec(&data, &st, 0.83, 2, 3).unwrap();
    c.bench_function("design_matrix 6x15x10", |b| {
        b.iter(|| design_matrix(black_box(&data), &st, &spec, 0.83).unwrap())
    });
}

fn bench_fit(c: &mut Criterion) {
    let controls = FitControls::default();
    for (levels, times) in [(3, 5), (6, 15)] {
        let (data, st) = dataset(levels, times);
        let spec = default_spec(&data, &st, 0.83, 2, 3).unwrap();
        c.bench_function(&format!("fit_given_beta {levels}x{times}"), |b| {
            b.iter(|| fit_given_beta(black_box(&data), &st, &spec, 0.83, &controls).unwrap())
        });
        c.bench_function(&format!("profile_fit {levels}x{times}"), |b| {
            b.iter(|| profile_fit(black_box(&data), &st, &policy(), &controls).unwrap())
        });
    }
}

fn bench_bootstrap(c: &mut Criterion) {
    let (data, st) = dataset(6, 10);
    let fit = profile_fit(&data, &st, &policy(), &FitControls::default()).unwrap();
    let options = BootstrapOptions {
        replicates: 50,
        ..BootstrapOptions::default()
    };
    let mut group = c.benchmark_group("bootstrap");
    group.sample_size(10);
    group.bench_function("resample_and_refit B=50 6x10", |b| {
        b.iter(|| resample_and_refit(black_box(&fit), &data, &options).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_design, bench_fit, bench_bootstrap);
criterion_main!(benches);
