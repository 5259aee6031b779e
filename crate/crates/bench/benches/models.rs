use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use gnn_linalg::autodiff::{Tape, Tensor};
use gnn_linalg::fem;
use gnn_linalg::nn::{DiffusionModel, JacobiModel};
use gnn_linalg::train::{eval_jacobi, jacobi_loss, prepare_diffusion, prepare_jacobi, diffusion_loss, EigOptions, ProbeKind};
use gnn_linalg_bench::{diffusion_instance, jacobi_instance};

fn jacobi(c: &mut Criterion) {
    let inst = jacobi_instance();
    let model = JacobiModel::glorot(0);
    let sample = prepare_jacobi(&inst, 20, 0, ProbeKind::HighFrequency).unwrap();
    let mut g = c.benchmark_group("jacobi_model");
    g.bench_function("forward_layer", |b| b.iter(|| model.forward(black_box(&inst.matrix)).unwrap()));
    g.bench_function("forward_batched", |b| b.iter(|| model.forward_features(black_box(&sample.features)).unwrap()));
    g.bench_function("loss_and_gradient", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let flat = tape.param(Tensor::column(model.params.clone()));
            let d = JacobiModel::taped(&mut tape, flat, &sample.features).unwrap();
            let l = jacobi_loss(&mut tape, d, Arc::clone(&sample.matrix), &sample.probes, 3).unwrap();
            tape.backward(l).unwrap().wrt(&tape, flat)
        })
    });
    let d = model.forward(&inst.matrix).unwrap();
    let v_hf = fem::dst_matrix(&inst.coords, &inst.dst_modes().unwrap().high);
    g.sample_size(10);
    g.bench_function("top10_eigenvalues", |b| {
        b.iter(|| eval_jacobi(&inst.matrix, black_box(&d), &v_hf, &EigOptions::default()).unwrap())
    });
    g.finish();
}

fn diffusion(c: &mut Criterion) {
    let sample = prepare_diffusion(&diffusion_instance(28)).unwrap();
    let model = DiffusionModel::glorot(0);
    let mut g = c.benchmark_group("diffusion_model");
    g.sample_size(20);
    g.bench_function("forward_layer", |b| b.iter(|| model.forward(black_box(&sample.input)).unwrap()));
    g.bench_function("forward_batched", |b| b.iter(|| model.predict(black_box(&sample.input)).unwrap()));
    g.bench_function("loss_and_gradient", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let flat = tape.param(Tensor::column(model.params.clone()));
            let pred = DiffusionModel::taped(&mut tape, flat, &sample.input).unwrap();
            let l = diffusion_loss(&mut tape, pred, &sample.targets).unwrap();
            tape.backward(l).unwrap().wrt(&tape, flat)
        })
    });
    g.finish();
}

criterion_group!(benches, jacobi, diffusion);
criterion_main!(benches);
