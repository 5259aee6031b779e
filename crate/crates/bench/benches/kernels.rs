use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gnn_linalg::amg::{cf_split_greedy, direct_interpolation, soc_classic, soc_sa};
use gnn_linalg::kernels::{gnn_chebyshev, gnn_jacobi, gnn_power_method, gnn_spmv, reference};
use gnn_linalg_bench::{poisson, random_vector};

fn spmv(c: &mut Criterion) {
    let mut g = c.benchmark_group("spmv");
    for n in [16, 48] {
        let a = poisson(n);
        let x = random_vector(a.n(), 1);
        g.bench_with_input(BenchmarkId::new("csr", a.n()), &a, |b, a| b.iter(|| reference::spmv(a, black_box(&x))));
        g.bench_with_input(BenchmarkId::new("layer", a.n()), &a, |b, a| {
            b.iter(|| gnn_spmv(a, black_box(&x), true).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("layer_no_self_edges", a.n()), &a, |b, a| {
            b.iter(|| gnn_spmv(a, black_box(&x), false).unwrap())
        });
    }
    g.finish();
}

fn iterations(c: &mut Criterion) {
    let a = poisson(32);
    let x = random_vector(a.n(), 2);
    let rhs = vec![1.0; a.n()];
    let mut g = c.benchmark_group("iterations");
    g.bench_function("jacobi_10", |b| b.iter(|| gnn_jacobi(&a, &rhs, black_box(&x), 2.0 / 3.0, 10).unwrap()));
    g.bench_function("jacobi_10_csr", |b| b.iter(|| reference::jacobi(&a, &rhs, black_box(&x), 2.0 / 3.0, 10)));
    g.bench_function("chebyshev_10", |b| {
        b.iter(|| gnn_chebyshev(&a, &rhs, black_box(&x), 0.05, 4.0, 10).unwrap())
    });
    g.bench_function("power_50", |b| b.iter(|| gnn_power_method(&a, black_box(&x), 50).unwrap()));
    g.finish();
}

fn amg(c: &mut Criterion) {
    let a = poisson(32);
    let s_hat = soc_classic(&a, 0.25).unwrap();
    let cf = cf_split_greedy(&s_hat).unwrap();
    let mut g = c.benchmark_group("amg");
    g.bench_function("soc_sa", |b| b.iter(|| soc_sa(black_box(&a)).unwrap()));
    g.bench_function("soc_classic", |b| b.iter(|| soc_classic(black_box(&a), 0.25).unwrap()));
    g.bench_function("direct_interpolation", |b| {
        b.iter(|| direct_interpolation(black_box(&a), &s_hat, &cf).unwrap())
    });
    g.finish();
}

criterion_group!(benches, spmv, iterations, amg);
criterion_main!(benches);
