use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hardsphere::histories::build_history;
use hardsphere::{Tolerances, Tree};
use hardsphere_bench::{gas, node_vars, unit_box};

fn bench_build_history(c: &mut Criterion) {
    let bx = unit_box();
    let tol = Tolerances::default();
    let z = gas(1, 3);
    let mut group = c.benchmark_group("build_history");
    for js in [vec![], vec![1], vec![1, 2], vec![1, 1, 2]] {
        let tree = Tree::new(1, js).expect("valid tree");
        let nv = node_vars(tree.m(), 1.0, 11);
        group.bench_with_input(BenchmarkId::new("tree", tree.to_string()), &tree, |b, tree| {
            b.iter(|| build_history(&bx, black_box(&z), 1.0, tree, &nv, &tol).map(|h| h.weight()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_build_history);
criterion_main!(benches);
