use std::hint::black_box;
use std::time::Duration;

use adiabound::bounds::{evaluate, BoundOptions};
use adiabound::circuits::CsfqSinModel;
use adiabound::evolution::{evolve, EvolveOptions};
use adiabound::linalg::{eigh, random};
use adiabound::operator_core::{split, twiddle};
use adiabound::oracle::{brute_force_leakage, leakage_scaling, LeakageOptions};
use adiabound::paths::two_level;
use adiabound::schedule::AnnealParams;
use adiabound::{BasisTag, HermitianOperator};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spectral(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = c.benchmark_group("eigh");
    for n in [16, 41, 81] {
        let a = random::hermitian(n, &mut rng);
        g.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| b.iter(|| eigh(black_box(a)).unwrap()));
    }
    g.finish();

    let mut g = c.benchmark_group("twiddle");
    for n in [16, 64] {
        let h = HermitianOperator::new(random::hermitian(n, &mut rng), BasisTag::Abstract).unwrap();
        let s = split(&h, 2).unwrap();
        let x = random::complex(n, n, &mut rng);
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| b.iter(|| twiddle(black_box(x), &s).unwrap()));
    }
    g.finish();
}

fn circuit(c: &mut Criterion) {
    let p = AnnealParams::from_delta(1e-9, 10.0, 1.0).unwrap();
    let model = CsfqSinModel::new(p.e_c, p.e_j(), p.e_alpha(), 20);
    c.bench_function("csfq_hamiltonian_n20", |b| b.iter(|| model.hamiltonian(black_box(0.5), 0.1).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    let path = two_level(1.0);
    c.bench_function("bounds_two_level", |b| {
        b.iter(|| evaluate(&path, black_box(0.5), &BoundOptions::default()).unwrap())
    });
    let opts = EvolveOptions { s_star: 0.5, ..Default::default() };
    c.bench_function("evolve_two_level_tf20", |b| b.iter(|| evolve(&path, black_box(20.0), &opts, None).unwrap()));

    let p = AnnealParams::new(10.0, 3.0, 1.0).unwrap();
    let t_f = 10.0 * leakage_scaling(&p).unwrap().trend / p.e_c;
    let opts = LeakageOptions { check_cutoff: false, ..Default::default() };
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10).measurement_time(Duration::from_secs(20));
    g.bench_function("leakage_a10_b3", |b| b.iter(|| brute_force_leakage(&p, black_box(t_f), &opts).unwrap()));
    g.finish();
}

criterion_group!(benches, spectral, circuit, pipeline);
criterion_main!(benches);
