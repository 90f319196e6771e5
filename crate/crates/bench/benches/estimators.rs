use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use nsp_ope::bounds::{bound_discounted, Estimand};
use nsp_ope::estimators::{run_estimator, Discounted, EstimatorKind, EstimatorOptions};
use nsp_ope::policies::NaturalPolicySpec;
use nsp_ope_bench::{chain_fixture, taxi_fixture};

fn finite(c: &mut Criterion) {
    let (mdp, _, data) = chain_fixture(10, 10_000);
    let spec = NaturalPolicySpec::tilting(vec![1.0, 2.0]).unwrap();
    let opts = EstimatorOptions::new(mdp.n_states(), mdp.n_actions()).with_k(2);
    let mut g = c.benchmark_group("finite_n1e4_H10");
    for kind in [EstimatorKind::Ti1, EstimatorKind::NaivePlugin, EstimatorKind::Dm] {
        g.bench_function(kind.name(), |b| b.iter(|| run_estimator(kind, black_box(&data), &spec, None, &opts).unwrap()));
    }
    g.finish();
}

fn taxi(c: &mut Criterion) {
    let mut g = c.benchmark_group("taxi_small");
    g.sample_size(10);
    for horizon in [10_000, 100_000] {
        let fx = taxi_fixture(horizon);
        let d = Discounted { gamma: 0.98, p_e1: fx.mdp.initial_dist() };
        let opts = EstimatorOptions::new(fx.mdp.n_states(), fx.mdp.n_actions()).with_k(2);
        for (kind, spec) in [
            (EstimatorKind::Ti2, &fx.tilting),
            (EstimatorKind::Mo2, &fx.modified),
            (EstimatorKind::Mis, &fx.tilting),
            (EstimatorKind::Dm, &fx.tilting),
        ] {
            g.bench_with_input(BenchmarkId::new(kind.name(), horizon), &fx.data, |b, data| {
                b.iter(|| run_estimator(kind, data, spec, Some(d), &opts).unwrap())
            });
        }
    }
    g.finish();
}

fn bounds(c: &mut Criterion) {
    let fx = taxi_fixture(10);
    let p_b = fx.mdp.sampling_dist().unwrap().to_vec();
    c.bench_function("taxi_small_bound_TI2", |b| {
        b.iter(|| bound_discounted(&fx.mdp, &fx.pi_b, &fx.tilting, &p_b, Estimand::Ti2).unwrap())
    });
}

criterion_group!(benches, finite, taxi, bounds);
criterion_main!(benches);
