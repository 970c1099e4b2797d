use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hardsphere::trees::enumerate_trees;

fn bench_enumerate(c: &mut Criterion) {
    let mut group = c.benchmark_group("enumerate_trees");
    for (n, m) in [(1usize, 4usize), (2, 4), (3, 5)] {
        group.bench_with_input(BenchmarkId::new("n_m", format!("{n}_{m}")), &(n, m), |b, &(n, m)| {
            b.iter(|| enumerate_trees(black_box(n), black_box(m), u128::MAX).map(|v| v.len()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_enumerate);
criterion_main!(benches);
