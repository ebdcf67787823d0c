use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dada_bench::{random_matrix, unit_rows};
use dada_core::eval::{map_at_r, recall_at_k, RetrievalIndex};
use dada_core::linalg::nuclear_norm_with_grad;
use dada_core::Graph;
use std::hint::black_box;

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_forward_backward");
    for n in [32, 64, 128] {
        let a = random_matrix(n, n, 1);
        let b = random_matrix(n, n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let x = g.param(a.clone());
                let y = g.param(b.clone());
                let z = g.matmul(x, y).unwrap();
                let s = g.sum(z);
                g.backward(s).unwrap();
                black_box(g.grad(x).map(|v| v[0]))
            })
        });
    }
    group.finish();
}

fn nuclear_norm(c: &mut Criterion) {
    let mut group = c.benchmark_group("nuclear_norm");
    for (r, k) in [(32, 8), (64, 8), (64, 16)] {
        let a = random_matrix(r, k, 3);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{r}x{k}")), &a, |bench, a| {
            bench.iter(|| black_box(nuclear_norm_with_grad(a).unwrap().0))
        });
    }
    group.finish();
}

fn retrieval(c: &mut Criterion) {
    let mut group = c.benchmark_group("retrieval");
    for n in [100, 400] {
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let index = RetrievalIndex::new(unit_rows(n, 64, 4), labels).unwrap();
        group.bench_with_input(BenchmarkId::new("recall_at_k", n), &index, |bench, index| {
            bench.iter(|| black_box(recall_at_k(index, &[1, 2, 4, 8]).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("map_at_r", n), &index, |bench, index| {
            bench.iter(|| black_box(map_at_r(index).value))
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, nuclear_norm, retrieval);
criterion_main!(benches);
