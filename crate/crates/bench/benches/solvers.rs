use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use sgbh_bench::Workload;

const SIZES: [(usize, usize); 2] = [(31, 100), (63, 400)];

fn kernel_table(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernel_table");
    for (m, n) in SIZES {
        let w = Workload::new(m, n).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(format!("{m}x{n}")), &w, |b, w| {
            b.iter(|| black_box(w.table().unwrap()))
        });
    }
    g.finish();
}

fn solvers(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    for (m, n) in SIZES {
        let w = Workload::new(m, n).unwrap();
        let table = w.table().unwrap();
        let id = format!("{m}x{n}");
        g.bench_with_input(BenchmarkId::new("march", &id), &w, |b, w| {
            b.iter(|| black_box(w.march(&table).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("picard", &id), &w, |b, w| {
            b.iter(|| black_box(w.picard(&table).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("galerkin", &id), &w, |b, w| {
            b.iter(|| black_box(w.galerkin().unwrap()))
        });
        let base = w.march(&table).unwrap();
        g.bench_with_input(BenchmarkId::new("derivative", &id), &w, |b, w| {
            b.iter(|| black_box(w.derivative(&table, &base).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, kernel_table, solvers);
criterion_main!(benches);
