use gnn_linalg::autodiff::Tensor;
use gnn_linalg::fem::{
    assemble_diffusion_periodic, gen_diffusion_dataset, gen_jacobi_dataset, DiffusionDataConfig, JacobiDataConfig,
    ProblemInstance, Thetas,
};
use gnn_linalg::nn::{DiffusionModel, JacobiModel};
use gnn_linalg::train::{
    diffusion_input_from, jacobi_loss, jacobi_loss_value, jacobi_probes, train_jacobi, JacobiTrainConfig, ProbeKind,
};
use gnn_linalg::{CsrMatrix, Stream};
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::path::Path;
use std::sync::Arc;

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    Stream::new(seed, 9).shuffle(&mut p);
    p
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            out.data_mut()[perm[i] * t.cols() + j] = t.get(i, j);
        }
    }
    out
}

fn dense(a: &CsrMatrix) -> DMatrix<f64> {
    let rows = a.to_dense();
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| rows[i][j])
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn thetas() -> impl Strategy<Value = Thetas> {
    (0u32..=3, 0u32..=3, 0u32..=3, 0u32..=3).prop_map(|(a, b, c, d)| Thetas {
        alpha_x: a,
        alpha_y: b,
        beta_x: c,
        beta_y: d,
    })
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn jacobi_model_is_permutation_equivariant(
        n_y in 6usize..10, beta in 0.005f64..0.05, col in 0usize..100, seed in any::<u64>()
    ) {
        let col = 2 + col % (n_y - 4);
        let a = ProblemInstance::jacobi(0, 0, n_y, beta, col).unwrap().matrix;
        let perm = permutation(a.n(), seed);
        let model = JacobiModel::glorot(seed);
        let d = model.forward(&a).unwrap();
        let dp = model.forward(&a.permuted(&perm).unwrap()).unwrap();
        for i in 0..a.n() {
            prop_assert!(close(dp[perm[i]], d[i], 1e-12));
        }
    }

    #[test]
    fn diffusion_model_is_permutation_equivariant(n in 4usize..8, th in thetas(), seed in any::<u64>()) {
        let sys = assemble_diffusion_periodic(n, th).unwrap();
        let perm = permutation(sys.coords.len(), seed);
        let mut coords = sys.coords.clone();
        for (i, c) in sys.coords.iter().enumerate() {
            coords[perm[i]] = *c;
        }
        let h = 1.0 / n as f64;
        let model = DiffusionModel::glorot(seed);
        let y = model.predict(&diffusion_input_from(&sys.matrix, &sys.coords, h).unwrap()).unwrap();
        let ap = sys.matrix.permuted(&perm).unwrap();
        let yp = model.predict(&diffusion_input_from(&ap, &coords, h).unwrap()).unwrap();
        for i in 0..y.rows() {
            for j in 0..2 {
                prop_assert!(close(yp.get(perm[i], j), y.get(i, j), 1e-12));
            }
        }
    }

    #[test]
    fn jacobi_loss_permutation_invariance_and_sign(
        n_y in 6usize..10, beta in 0.005f64..0.05, col in 0usize..100, seed in any::<u64>(), k in 1usize..5
    ) {
        let col = 2 + col % (n_y - 4);
        let inst = ProblemInstance::jacobi(0, 0, n_y, beta, col).unwrap();
        let a = &inst.matrix;
        let probes = jacobi_probes(&inst, 4, seed, ProbeKind::HighFrequency).unwrap();
        let mut s = Stream::new(seed, 4);
        let d: Vec<f64> = a.diag().iter().map(|x| s.uniform_in(0.2, 1.2) / x).collect();
        let plain = jacobi_loss_value(&d, a, &probes, k).unwrap();
        prop_assert!(plain >= 0.0);
        let mut tape = gnn_linalg::autodiff::Tape::new();
        let dv = tape.param(Tensor::column(d.clone()));
        let l = jacobi_loss(&mut tape, dv, Arc::new(a.clone()), &probes, k).unwrap();
        prop_assert!((tape.value(l).item().unwrap() - plain).abs() <= 1e-13);
        let perm = permutation(a.n(), seed);
        let mut dp = d.clone();
        for i in 0..a.n() {
            dp[perm[i]] = d[i];
        }
        let permuted = jacobi_loss_value(&dp, &a.permuted(&perm).unwrap(), &permute_rows(&probes, &perm), k).unwrap();
        prop_assert!(close(permuted, plain, 1e-12));
    }

    #[test]
    fn dirichlet_systems_are_symmetric_positive_definite(
        n_y in 6usize..12, beta in 0.002f64..0.04, col in 0usize..100, seed in any::<u64>()
    ) {
        let col = 2 + col % (n_y - 4);
        let a = ProblemInstance::jacobi(0, 0, n_y, beta.min(0.45 / (n_y as f64 - 1.0)), col).unwrap().matrix;
        prop_assert!(a.symmetry_defect() <= 1e-13);
        let mut s = Stream::new(seed, 5);
        for _ in 0..100 {
            let mut x: Vec<f64> = (0..a.n()).map(|_| s.normal()).collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter_mut().for_each(|v| *v /= norm);
            prop_assert!(a.quadratic_form(&x).unwrap() > 0.0);
        }
    }

    #[test]
    fn periodic_systems_have_constant_null_space(n in 4usize..9, th in thetas()) {
        let a = assemble_diffusion_periodic(n, th).unwrap().matrix;
        prop_assert!(a.symmetry_defect() <= 1e-13);
        for i in 0..a.n() {
            prop_assert!(a.row(i).1.iter().sum::<f64>().abs() <= 1e-12);
        }
        let mut ev: Vec<f64> = dense(&a).symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let scale = ev[ev.len() - 1];
        prop_assert!(ev[0].abs() <= 1e-12 * scale);
        prop_assert!(ev[1] > 1e-9 * scale, "second eigenvalue {} of {}", ev[1], scale);
    }
}

#[test]
fn dataset_generation_is_pure() {
    let jc = JacobiDataConfig { train: 3, val: 2, test: 2, ..JacobiDataConfig::desk(11) };
    let dc = DiffusionDataConfig { train: 2, val: 1, test: 1, ..DiffusionDataConfig::desk(11) };
    let write = |ds: &gnn_linalg::fem::Dataset| {
        let dir = tempfile::tempdir().unwrap();
        for (name, set) in ds.splits() {
            for inst in set {
                inst.write_dir(&dir.path().join(name).join(inst.meta.index().to_string())).unwrap();
            }
        }
        let f = files(dir.path());
        (dir, f)
    };
    let (_d1, a) = write(&gen_jacobi_dataset(&jc).unwrap());
    let (_d2, b) = write(&gen_jacobi_dataset(&jc).unwrap());
    assert_eq!(a, b);
    let (_d3, c) = write(&gen_diffusion_dataset(&dc).unwrap());
    let (_d4, d) = write(&gen_diffusion_dataset(&dc).unwrap());
    assert_eq!(c, d);
    let other = JacobiDataConfig { seed: 12, ..jc };
    let (_d5, e) = write(&gen_jacobi_dataset(&other).unwrap());
    assert_ne!(a, e);
}

#[test]
fn early_stopping_returns_validation_minimum() {
    let data = JacobiDataConfig { n_y: 8, beta_min: 0.01, beta_max: 0.05, train: 4, val: 3, test: 1, seed: 2 };
    let ds = gen_jacobi_dataset(&data).unwrap();
    let mut cfg = JacobiTrainConfig::desk(2);
    cfg.run.epochs = 6;
    cfg.run.batch_size = 2;
    cfg.run.lr = 3e-2;
    cfg.m = 5;
    let out = train_jacobi(&ds, &cfg).unwrap();
    let min = out.curve.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.checkpoint.meta.val_loss, min);
    assert_eq!(out.curve[out.best_epoch].val_loss, min);
    let model = out.checkpoint.jacobi().unwrap();
    let val: f64 = ds
        .val
        .iter()
        .map(|inst| {
            let probes = jacobi_probes(inst, cfg.m, cfg.run.seed, cfg.probes).unwrap();
            let d = model.forward(&inst.matrix).unwrap();
            jacobi_loss_value(&d, &inst.matrix, &probes, cfg.k).unwrap()
        })
        .sum::<f64>()
        / ds.val.len() as f64;
    assert!((val - min).abs() <= 1e-12 * min);
    let again = train_jacobi(&ds, &cfg).unwrap();
    assert_eq!(again.checkpoint.to_json().unwrap(), out.checkpoint.to_json().unwrap());
    assert_eq!(again.loss_curve_csv(), out.loss_curve_csv());
}
