use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use crw::rankprob::{rank_prob, RankModel, RankProbMethod};

fn cases() -> Vec<(&'static str, RankModel, RankProbMethod)> {
    vec![
        ("exact_m2000", RankModel::alt_query(1800, 200, 1.5).unwrap(), RankProbMethod::Exact),
        ("approx_m10000", RankModel::alt_query(9000, 1000, 2.0).unwrap(), RankProbMethod::Approx),
        ("grid_m10000", RankModel::alt_query(9000, 1000, 2.0).unwrap(), RankProbMethod::Grid { grid_size: 512 }),
        ("mc_m1000", RankModel::alt_query(900, 100, 2.0).unwrap(), RankProbMethod::Mc { draws: 20_000, seed: 1 }),
    ]
}

#[cfg(feature = "parallel")]
fn bench(c: &mut Criterion) {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut group = c.benchmark_group("rankprob");
    group.sample_size(20);
    for (name, model, method) in cases() {
        group.bench_with_input(BenchmarkId::new("one_thread", name), &model, |b, m| {
            b.iter(|| single.install(|| rank_prob(black_box(m), method).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("pool", name), &model, |b, m| {
            b.iter(|| rank_prob(black_box(m), method).unwrap())
        });
    }
    group.finish();
}

#[cfg(not(feature = "parallel"))]
fn bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("rankprob");
    group.sample_size(20);
    for (name, model, method) in cases() {
        group.bench_with_input(BenchmarkId::new("sequential", name), &model, |b, m| {
            b.iter(|| rank_prob(black_box(m), method).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
