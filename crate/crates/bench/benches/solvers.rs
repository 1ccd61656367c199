use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lcp_pqn::prox::{default_tolerance, weighted_prox, ProxMetric, DEFAULT_MAX_ITER};
use lcp_pqn::quasinewton::BfgsAccumulator;
use lcp_pqn::solvers::{bb_pgd, bi_pqn, mono_pqn};
use lcp_pqn::SolveOptions;
use lcp_pqn_bench::{contact_suite, random_spd_instance};

fn solvers_on_contacts(c: &mut Criterion) {
    let suite = contact_suite(3, 4, 100, "perturb-c:0.05");
    let opts = SolveOptions::default();
    let mut group = c.benchmark_group("contact_m3");
    for (k, inst) in suite.iter().enumerate() {
        let x0 = vec![0.0; inst.n()];
        group.bench_with_input(BenchmarkId::new("mono_pqn", k), inst, |bch, inst| {
            bch.iter(|| mono_pqn(&inst.counted_high(), &inst.b, &x0, &opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("bi_pqn", k), inst, |bch, inst| {
            bch.iter(|| bi_pqn(&inst.counted_high(), &inst.counted_low(), &inst.b, &x0, &opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("bb_pgd", k), inst, |bch, inst| {
            bch.iter(|| bb_pgd(&inst.counted_high(), &inst.b, &x0, &opts).unwrap())
        });
    }
    group.finish();
}

fn solvers_on_random_spd(c: &mut Criterion) {
    let opts = SolveOptions::default();
    let mut group = c.benchmark_group("random_spd");
    for n in [50, 200] {
        let inst = random_spd_instance(n, 0.1, n as u64);
        let x0 = vec![0.0; n];
        group.bench_with_input(BenchmarkId::new("mono_pqn", n), &inst, |bch, inst| {
            bch.iter(|| mono_pqn(&inst.counted_high(), &inst.b, &x0, &opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("bb_pgd", n), &inst, |bch, inst| {
            bch.iter(|| bb_pgd(&inst.counted_high(), &inst.b, &x0, &opts).unwrap())
        });
    }
    group.finish();
}

fn prox_under_rank_two_metric(c: &mut Criterion) {
    let mut group = c.benchmark_group("weighted_prox");
    for n in [30, 300] {
        let mut acc = BfgsAccumulator::scaled_identity(n, 1.0).unwrap();
        for k in 0..2 {
            let s: Vec<f64> = (0..n).map(|i| ((i + k) as f64).sin()).collect();
            let y: Vec<f64> = s.iter().enumerate().map(|(i, v)| v * (1.0 + (i % 3) as f64)).collect();
            acc.update(&s, &y).unwrap();
        }
        let metric: ProxMetric = acc.prox_metric().unwrap();
        let center: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        group.bench_function(BenchmarkId::from_parameter(n), |bch| {
            bch.iter(|| weighted_prox(black_box(&metric), black_box(&center), default_tolerance(&center), DEFAULT_MAX_ITER))
        });
    }
    group.finish();
}

criterion_group!(benches, solvers_on_contacts, solvers_on_random_spd, prox_under_rank_two_metric);
criterion_main!(benches);
