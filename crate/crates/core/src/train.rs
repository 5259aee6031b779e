//! Losses, training loops, Jacobi baselines and evaluation for the two
//! learning experiments.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gemm, Tape, Tensor, Var};
use crate::error::{dim, Error, Result};
use crate::fem::{self, InstanceMeta, ProblemInstance};
use crate::graph_net::{AttributedGraph, Attrs};
use crate::nn::{
    Adam, Checkpoint, DiffusionInput, DiffusionModel, JacobiModel, ModelKind, TrainingMeta,
};
use crate::rng::{streams, Stream};
use crate::sparse::{dot, norm2, CsrMatrix};

/// Where the loss probes come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Distinct random columns of the high-frequency sine basis.
    #[default]
    HighFrequency,
    /// Random unit vectors.
    Sphere,
}

/// Shared training-loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Return the parameters of the epoch with the lowest validation loss
    /// instead of the last epoch.
    #[serde(default = "yes")]
    pub early_stop: bool,
    /// Stop once this many epochs pass without a new validation minimum.
    #[serde(default)]
    pub patience: Option<usize>,
}

fn yes() -> bool {
    true
}

impl LoopConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobiTrainConfig {
    #[serde(flatten)]
    pub run: LoopConfig,
    /// Power of the iteration matrix in the loss.
    pub k: usize,
    /// Probes per matrix.
    pub m: usize,
    #[serde(default)]
    pub probes: ProbeKind,
}

impl JacobiTrainConfig {
    pub fn paper(seed: u64) -> Self {
        Self {
            run: LoopConfig {
                epochs: 100,
                batch_size: 100,
                lr: 1e-3,
                seed,
                early_stop: true,
                patience: None,
            },
            k: 3,
            m: 20,
            probes: ProbeKind::HighFrequency,
        }
    }

    pub fn desk(seed: u64) -> Self {
        Self {
            run: LoopConfig {
                epochs: 30,
                batch_size: 1,
                lr: 1e-3,
                seed,
                early_stop: true,
                patience: None,
            },
            ..Self::paper(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        self.run.validate()?;
        if self.k == 0 || self.m == 0 {
            return Err(Error::InvalidArgument("k and m must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionTrainConfig {
    #[serde(flatten)]
    pub run: LoopConfig,
}

impl DiffusionTrainConfig {
    pub fn paper(seed: u64) -> Self {
        Self {
            run: LoopConfig {
                epochs: 200,
                batch_size: 10,
                lr: 1e-3,
                seed,
                early_stop: true,
                patience: None,
            },
        }
    }

    pub fn desk(seed: u64) -> Self {
        let mut c = Self::paper(seed);
        c.run.epochs = 60;
        c
    }
}

/// Losses after one epoch. Epoch 0 is the untrained model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-instance loss over the training set.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn loss_curve_csv(&self) -> String {
        loss_curve_csv(&self.curve)
    }
}

pub fn loss_curve_csv(curve: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for r in curve {
        let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
    }
    s
}

type LossGrad<'a, S> = &'a (dyn Fn(&[f64], &S) -> Result<(f64, Vec<f64>)> + Sync);
type LossOnly<'a, S> = &'a (dyn Fn(&[f64], &S) -> Result<f64> + Sync);

fn mean_loss<S: Sync>(params: &[f64], set: &[S], loss: LossOnly<'_, S>) -> Result<f64> {
    let v = set.par_iter().map(|s| loss(params, s)).collect::<Result<Vec<_>>>()?;
    Ok(v.iter().sum::<f64>() / v.len().max(1) as f64)
}

/// Adam over shuffled mini-batches with per-epoch validation. Batch
/// gradients are the sum of per-sample gradients in sample order.
fn run_loop<S: Sync>(
    init: Vec<f64>,
    train: &[S],
    val: &[S],
    cfg: &LoopConfig,
    loss_grad: LossGrad<'_, S>,
    loss: LossOnly<'_, S>,
) -> Result<(Vec<f64>, usize, Vec<EpochRecord>)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
    }
    let mut params = init;
    let mut adam = Adam::new(params.len(), cfg.lr);
    let diverged = |epoch: usize, what: &str| {
        Error::Numerical(format!("training diverged at epoch {epoch}: {what} is not finite"))
    };
    let mut curve = vec![EpochRecord {
        epoch: 0,
        train_loss: mean_loss(&params, train, loss)?,
        val_loss: mean_loss(&params, val, loss)?,
    }];
    if !curve[0].val_loss.is_finite() || !curve[0].train_loss.is_finite() {
        return Err(diverged(0, "initial loss"));
    }
    let mut best = (0, curve[0].val_loss, params.clone());
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        Stream::new(cfg.seed, streams::SHUFFLE + epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| loss_grad(&params, &train[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; params.len()];
            for (&i, (l, g)) in batch.iter().zip(&results) {
                if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
                    return Err(diverged(epoch, &format!("loss or gradient of training sample {i}")));
                }
                total += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            adam.step(&mut params, &grad)?;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: mean_loss(&params, val, loss)?,
        };
        if !rec.val_loss.is_finite() {
            return Err(diverged(epoch, "validation loss"));
        }
        curve.push(rec);
        if rec.val_loss < best.1 {
            best = (epoch, rec.val_loss, params.clone());
        }
        if let Some(p) = cfg.patience {
            if cfg.early_stop && epoch - best.0 >= p {
                break;
            }
        }
    }
    if cfg.early_stop {
        Ok((best.2, best.0, curve))
    } else {
        let last = curve.last().expect("nonempty").epoch;
        Ok((params, last, curve))
    }
}

fn outcome(
    kind: ModelKind,
    params: Vec<f64>,
    best_epoch: usize,
    curve: Vec<EpochRecord>,
    seed: u64,
) -> Result<TrainOutcome> {
    let rec = curve.iter().find(|r| r.epoch == best_epoch).copied().expect("recorded epoch");
    let meta = TrainingMeta {
        seed,
        epoch: best_epoch,
        train_loss: rec.train_loss,
        val_loss: rec.val_loss,
        history: curve.iter().map(|r| (r.epoch, r.train_loss, r.val_loss)).collect(),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(kind, params, meta)?,
        curve,
        best_epoch,
    })
}

// ---------------------------------------------------------------------------
// Learned Jacobi

/// Inputs of the Jacobi loss for one matrix.
#[derive(Clone, Debug)]
pub struct JacobiSample {
    pub index: usize,
    pub matrix: Arc<CsrMatrix>,
    pub features: Tensor,
    /// `n x m` unit probe columns.
    pub probes: Tensor,
}

/// Probe columns for instance `inst`, drawn from stream
/// `(seed, PROBES + index)` so they stay fixed across epochs.
pub fn jacobi_probes(inst: &ProblemInstance, m: usize, seed: u64, kind: ProbeKind) -> Result<Tensor> {
    let mut rng = Stream::new(seed, streams::PROBES + inst.meta.index() as u64);
    match kind {
        ProbeKind::HighFrequency => {
            let modes = inst.dst_modes()?;
            if modes.high.len() < m {
                return Err(Error::InvalidArgument(format!(
                    "{m} probes requested but only {} high-frequency modes exist",
                    modes.high.len()
                )));
            }
            let pick: Vec<(usize, usize)> = rng
                .sample_distinct(modes.high.len(), m)
                .into_iter()
                .map(|k| modes.high[k])
                .collect();
            Ok(fem::dst_matrix(&inst.coords, &pick))
        }
        ProbeKind::Sphere => {
            let n = inst.matrix.n();
            let mut t = Tensor::from_fn(n, m, |_, _| rng.normal());
            for j in 0..m {
                let s = (0..n).map(|i| t.get(i, j).powi(2)).sum::<f64>().sqrt();
                for i in 0..n {
                    t.data_mut()[i * m + j] /= s;
                }
            }
            Ok(t)
        }
    }
}

pub fn prepare_jacobi(inst: &ProblemInstance, m: usize, seed: u64, kind: ProbeKind) -> Result<JacobiSample> {
    Ok(JacobiSample {
        index: inst.meta.index(),
        matrix: Arc::new(inst.matrix.clone()),
        features: JacobiModel::features(&inst.matrix)?,
        probes: jacobi_probes(inst, m, seed, kind)?,
    })
}

/// `max_i ||(I - diag(d) A)^k u_i||^(1/k)` over the probe columns, on tape.
pub fn jacobi_loss(tape: &mut Tape, d: Var, a: Arc<CsrMatrix>, probes: &Tensor, k: usize) -> Result<Var> {
    if tape.value(d).shape() != (a.nrows(), 1) || probes.rows() != a.nrows() {
        return Err(dim(format!(
            "jacobi loss: d is {:?}, probes {:?}, matrix {}x{}",
            tape.value(d).shape(),
            probes.shape(),
            a.nrows(),
            a.ncols()
        )));
    }
    let mut x = tape.constant(probes.clone());
    for _ in 0..k {
        let ax = tape.spmm(a.clone(), x)?;
        let dax = tape.mul_col(ax, d)?;
        x = tape.sub(x, dax)?;
    }
    let norms = tape.col_norms(x);
    let roots = tape.pow(norms, 1.0 / k as f64)?;
    tape.max(roots)
}

/// Untaped evaluation of [`jacobi_loss`].
pub fn jacobi_loss_value(d: &[f64], a: &CsrMatrix, probes: &Tensor, k: usize) -> Result<f64> {
    if d.len() != a.nrows() || probes.rows() != a.nrows() {
        return Err(dim("jacobi loss: d, probes and matrix disagree"));
    }
    let mut best = f64::NEG_INFINITY;
    for j in 0..probes.cols() {
        let mut u: Vec<f64> = (0..probes.rows()).map(|i| probes.get(i, j)).collect();
        for _ in 0..k {
            let au = a.spmv(&u)?;
            for i in 0..u.len() {
                u[i] -= au[i] * d[i];
            }
        }
        let r = norm2(&u).powf(1.0 / k as f64);
        if r > best {
            best = r;
        }
    }
    Ok(best)
}

fn jacobi_loss_grad(params: &[f64], s: &JacobiSample, k: usize) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let flat = tape.param(Tensor::column(params.to_vec()));
    let d = JacobiModel::taped(&mut tape, flat, &s.features)?;
    let l = jacobi_loss(&mut tape, d, s.matrix.clone(), &s.probes, k)?;
    let v = tape.value(l).item()?;
    Ok((v, tape.backward(l)?.wrt(&tape, flat).into_data()))
}

fn jacobi_loss_only(params: &[f64], s: &JacobiSample, k: usize) -> Result<f64> {
    let model = JacobiModel::from_params(params.to_vec())?;
    let d = model.forward_features(&s.features)?;
    jacobi_loss_value(&d, &s.matrix, &s.probes, k)
}

/// Trains the Jacobi model from Glorot initialization. Per-batch
/// gradients are the sum of per-matrix gradients in sample order.
pub fn train_jacobi(ds: &fem::Dataset, cfg: &JacobiTrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let prep = |set: &[ProblemInstance]| {
        set.par_iter()
            .map(|i| prepare_jacobi(i, cfg.m, cfg.run.seed, cfg.probes))
            .collect::<Result<Vec<_>>>()
    };
    let (train, val) = (prep(&ds.train)?, prep(&ds.val)?);
    let k = cfg.k;
    let (params, best, curve) = run_loop(
        JacobiModel::glorot(cfg.run.seed).params,
        &train,
        &val,
        &cfg.run,
        &|p, s| jacobi_loss_grad(p, s, k),
        &|p, s| jacobi_loss_only(p, s, k),
    )?;
    outcome(ModelKind::Jacobi, params, best, curve, cfg.run.seed)
}

/// Iteration cap and tolerance for the extremal eigenvalue estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 200_000,
        }
    }
}

/// Dominant eigenpair of a symmetric operator; converged when
/// `||B v - lambda v|| <= tol * |lambda|`.
fn sym_power(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>, opts: PowerOptions) -> Result<f64> {
    let mut rng = Stream::new(0, streams::MISC);
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let s = norm2(&v);
    v.iter_mut().for_each(|x| *x /= s);
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let w = apply(&v);
        let lambda = dot(&v, &w);
        residual = w.iter().zip(&v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
        if residual <= opts.tol * lambda.abs() {
            return Ok(lambda);
        }
        let s = norm2(&w);
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Numerical("power iteration collapsed to zero".into()));
        }
        v = w.into_iter().map(|x| x / s).collect();
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iters,
        residual,
    })
}

/// `(lambda_min, lambda_max)` of `D^-1 A`, from the symmetric form
/// `D^-1/2 A D^-1/2`.
pub fn jacobi_extremal_eigs(a: &CsrMatrix, opts: PowerOptions) -> Result<(f64, f64)> {
    if !a.is_square() {
        return Err(dim("extremal eigenvalues need a square matrix"));
    }
    let diag = a.diag();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument(format!("diagonal entry {i} is not positive")));
    }
    let s: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut vals = Vec::with_capacity(a.nnz());
    for i in 0..a.nrows() {
        let (cols, v) = a.row(i);
        for (&j, &x) in cols.iter().zip(v) {
            vals.push(s[i] * x * s[j]);
        }
    }
    let m = a.with_values(vals)?;
    let n = a.nrows();
    let lmax = sym_power(n, |v| m.spmv(v).expect("square"), opts)?;
    let shifted = sym_power(
        n,
        |v| {
            let mv = m.spmv(v).expect("square");
            v.iter().zip(mv).map(|(x, y)| lmax * x - y).collect()
        },
        opts,
    )?;
    Ok((lmax - shifted, lmax))
}

/// `2 / (lambda_min + lambda_max)` of `D^-1 A`.
pub fn omega_co(a: &CsrMatrix) -> Result<f64> {
    let (lo, hi) = jacobi_extremal_eigs(a, PowerOptions::default())?;
    Ok(2.0 / (lo + hi))
}

/// Eigen solver for the projected iteration matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigSolver {
    /// Dense when the projected size is at most `dense_limit`.
    #[default]
    Auto,
    Dense,
    Subspace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigOptions {
    pub k: usize,
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub solver: EigSolver,
    #[serde(default = "dense_limit")]
    pub dense_limit: usize,
}

fn dense_limit() -> usize {
    400
}

impl Default for EigOptions {
    fn default() -> Self {
        Self {
            k: 10,
            tol: 1e-8,
            max_iters: 5000,
            solver: EigSolver::Auto,
            dense_limit: dense_limit(),
        }
    }
}

/// Leading eigenvalues, largest modulus first.
#[derive(Clone, Debug, PartialEq)]
pub struct EigResult {
    pub values: Vec<Complex<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub solver: EigSolver,
}

impl EigResult {
    pub fn spectral_radius(&self) -> f64 {
        self.values.first().map_or(0.0, |z| z.norm())
    }
}

fn sort_by_modulus(mut z: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
    z.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
    z
}

fn dense_eigs(m: DMatrix<f64>, max_iters: usize) -> Result<Vec<Complex<f64>>> {
    for eps in [4.0 * f64::EPSILON, 64.0 * f64::EPSILON, 1e-12] {
        if let Some(schur) = m.clone().try_schur(eps, max_iters.max(1000)) {
            return Ok(sort_by_modulus(schur.complex_eigenvalues().iter().copied().collect()));
        }
    }
    Err(Error::Numerical("dense Schur decomposition did not converge".into()))
}

/// The projected iteration matrix as a dense `h x h` matrix.
pub fn projected_matrix(a: &CsrMatrix, d: &[f64], v_hf: &Tensor) -> Result<DMatrix<f64>> {
    check_projection(a, d, v_hf)?;
    let h = v_hf.cols();
    let mut eye = vec![0.0; h * h];
    for i in 0..h {
        eye[i * h + i] = 1.0;
    }
    let m = projected_apply(a, d, v_hf, &eye, h);
    Ok(DMatrix::from_row_slice(h, h, &m))
}

fn check_projection(a: &CsrMatrix, d: &[f64], v_hf: &Tensor) -> Result<()> {
    if !a.is_square() || d.len() != a.nrows() || v_hf.rows() != a.nrows() || v_hf.cols() == 0 {
        return Err(dim(format!(
            "projection: {}x{} matrix, {} diagonal entries, basis {:?}",
            a.nrows(),
            a.ncols(),
            d.len(),
            v_hf.shape()
        )));
    }
    Ok(())
}

/// `I - V^T diag(d) A V` applied to the columns of `q` (`h x p`, row-major).
fn projected_apply(a: &CsrMatrix, d: &[f64], v: &Tensor, q: &[f64], p: usize) -> Vec<f64> {
    let (n, h) = v.shape();
    let mut y = vec![0.0; n * p];
    gemm(n, h, p, v.data(), false, q, false, 0.0, &mut y);
    let mut z = vec![0.0; n * p];
    for i in 0..n {
        let (cols, vals) = a.row(i);
        let out = &mut z[i * p..(i + 1) * p];
        for (&j, &aij) in cols.iter().zip(vals) {
            for (o, yj) in out.iter_mut().zip(&y[j * p..(j + 1) * p]) {
                *o += aij * yj;
            }
        }
        out.iter_mut().for_each(|o| *o *= d[i]);
    }
    let mut w = vec![0.0; h * p];
    gemm(h, n, p, v.data(), true, &z, false, 0.0, &mut w);
    q.iter().zip(w).map(|(a, b)| a - b).collect()
}

/// Leading eigenvalues of `I - V_hf^T diag(d) A V_hf` by modulus.
///
/// The subspace solver runs orthogonal iteration on a block of `2k`
/// columns with Rayleigh-Ritz extraction; it stops when the leading `k`
/// Ritz values move less than `tol * max(1, |lambda_1|)` in one step.
pub fn eval_jacobi(a: &CsrMatrix, d: &[f64], v_hf: &Tensor, opts: &EigOptions) -> Result<EigResult> {
    check_projection(a, d, v_hf)?;
    let h = v_hf.cols();
    let k = opts.k.min(h);
    let dense = match opts.solver {
        EigSolver::Dense => true,
        EigSolver::Subspace => false,
        EigSolver::Auto => h <= opts.dense_limit,
    };
    if dense {
        let mut values = dense_eigs(projected_matrix(a, d, v_hf)?, opts.max_iters)?;
        values.truncate(k);
        return Ok(EigResult {
            values,
            converged: true,
            iterations: 0,
            solver: EigSolver::Dense,
        });
    }
    let p = (2 * k).max(k + 4).min(h);
    let mut rng = Stream::new(0, streams::MISC);
    let mut q = DMatrix::from_fn(h, p, |_, _| rng.normal()).qr().q();
    let mut prev: Vec<Complex<f64>> = Vec::new();
    for it in 1..=opts.max_iters {
        let qrow: Vec<f64> = q.transpose().as_slice().to_vec();
        let z = DMatrix::from_row_slice(h, p, &projected_apply(a, d, v_hf, &qrow, p));
        let t = q.transpose() * &z;
        let mut ritz = dense_eigs(t, opts.max_iters)?;
        ritz.truncate(k);
        if !ritz.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::Numerical("subspace iteration produced non-finite Ritz values".into()));
        }
        let scale = ritz.first().map_or(1.0, |z| z.norm()).max(1.0);
        let done = prev.len() == ritz.len()
            && prev.iter().zip(&ritz).all(|(a, b)| (a - b).norm() <= opts.tol * scale);
        if done {
            return Ok(EigResult {
                values: ritz,
                converged: true,
                iterations: it,
                solver: EigSolver::Subspace,
            });
        }
        prev = ritz;
        q = z.qr().q();
    }
    Ok(EigResult {
        values: prev,
        converged: false,
        iterations: opts.max_iters,
        solver: EigSolver::Subspace,
    })
}

/// Methods compared by [`compare_methods`], in report order.
pub const METHODS: [&str; 4] = ["learned", "omega_1", "omega_2_3", "omega_co"];

/// `d_i = omega / A_ii`.
pub fn omega_diagonal(a: &CsrMatrix, omega: f64) -> Vec<f64> {
    a.diag().iter().map(|&x| omega / x).collect()
}

#[derive(Clone, Debug)]
pub struct MatrixEval {
    pub index: usize,
    pub beta: f64,
    pub band_x: f64,
    pub omega_co: f64,
    /// One entry per name in [`METHODS`].
    pub eigs: Vec<EigResult>,
}

impl MatrixEval {
    pub fn radius(&self, method: usize) -> f64 {
        self.eigs[method].spectral_radius()
    }

    /// Method with the smallest spectral radius; earlier methods win ties.
    pub fn winner(&self) -> usize {
        let mut w = 0;
        for m in 1..self.eigs.len() {
            if self.radius(m) < self.radius(w) {
                w = m;
            }
        }
        w
    }
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub matrices: Vec<MatrixEval>,
    pub opts: EigOptions,
    /// Name written for method 0; [`METHODS`] supplies the rest.
    pub learned_label: String,
}

impl EvalReport {
    pub fn method_name(&self, method: usize) -> &str {
        if method == 0 {
            &self.learned_label
        } else {
            METHODS[method]
        }
    }

    /// Fraction of matrices where the learned radius is strictly below
    /// that of `method`.
    pub fn learned_beats(&self, method: usize) -> f64 {
        let wins = self.matrices.iter().filter(|m| m.radius(0) < m.radius(method)).count();
        wins as f64 / self.matrices.len().max(1) as f64
    }

    /// Per matrix, `radius(method) - radius(learned)`; positive means the
    /// learned diagonal damps better.
    pub fn differences(&self, method: usize) -> Vec<f64> {
        self.matrices.iter().map(|m| m.radius(method) - m.radius(0)).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.matrices.iter().all(|m| m.eigs.iter().all(|e| e.converged))
    }

    /// `matrix_id,method,k,eigenvalue,imag,modulus,converged`; `eigenvalue`
    /// is the real part.
    pub fn eig_csv(&self) -> String {
        let mut s = String::from("matrix_id,method,k,eigenvalue,imag,modulus,converged\n");
        for m in &self.matrices {
            for (k, e) in m.eigs.iter().enumerate() {
                let name = self.method_name(k);
                for (k, z) in e.values.iter().enumerate() {
                    let _ = writeln!(s, "{},{},{},{},{},{},{}", m.index, name, k + 1, z.re, z.im, z.norm(), e.converged);
                }
            }
        }
        s
    }

    /// `matrix_id,band_width,band_x,winner`, band width `2 beta`.
    pub fn winners_csv(&self) -> String {
        let mut s = String::from("matrix_id,band_width,band_x,winner\n");
        for m in &self.matrices {
            let _ = writeln!(s, "{},{},{},{}", m.index, 2.0 * m.beta, m.band_x, self.method_name(m.winner()));
        }
        s
    }

    /// `matrix_id,method,baseline_minus_learned`.
    pub fn differences_csv(&self) -> String {
        let mut s = String::from("matrix_id,method,baseline_minus_learned\n");
        for method in 1..METHODS.len() {
            for (m, d) in self.matrices.iter().zip(self.differences(method)) {
                let _ = writeln!(s, "{},{},{}", m.index, METHODS[method], d);
            }
        }
        s
    }

    /// `method,learned_beats_fraction,mean_radius`.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,learned_beats_fraction,mean_radius\n");
        for k in 0..METHODS.len() {
            let name = self.method_name(k);
            let mean = self.matrices.iter().map(|m| m.radius(k)).sum::<f64>() / self.matrices.len().max(1) as f64;
            let beats = if k == 0 { f64::NAN } else { self.learned_beats(k) };
            let _ = writeln!(s, "{name},{beats},{mean}");
        }
        s
    }
}

pub type DiagonalFn<'a> = &'a (dyn Fn(&ProblemInstance) -> Result<Vec<f64>> + Sync);

/// Evaluates the learned diagonal and the three constant weights on every
/// instance.
pub fn compare_methods(test: &[ProblemInstance], learned: DiagonalFn<'_>, opts: &EigOptions) -> Result<EvalReport> {
    let matrices = test
        .par_iter()
        .map(|inst| {
            let (beta, band_x) = match inst.meta {
                InstanceMeta::Jacobi { beta, band_x, .. } => (beta, band_x),
                InstanceMeta::Diffusion { .. } => {
                    return Err(Error::InvalidArgument("Jacobi evaluation needs Dirichlet band instances".into()))
                }
            };
            let a = &inst.matrix;
            let v_hf = fem::dst_matrix(&inst.coords, &inst.dst_modes()?.high);
            let w_co = omega_co(a)?;
            let diags = [
                learned(inst)?,
                omega_diagonal(a, 1.0),
                omega_diagonal(a, 2.0 / 3.0),
                omega_diagonal(a, w_co),
            ];
            let eigs = diags
                .iter()
                .map(|d| eval_jacobi(a, d, &v_hf, opts))
                .collect::<Result<Vec<_>>>()?;
            Ok(MatrixEval {
                index: inst.meta.index(),
                beta,
                band_x,
                omega_co: w_co,
                eigs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        matrices,
        opts: *opts,
        learned_label: METHODS[0].to_string(),
    })
}

/// Learned diagonal of `model` for an instance.
pub fn model_diagonal(model: &JacobiModel) -> impl Fn(&ProblemInstance) -> Result<Vec<f64>> + Sync + '_ {
    move |inst| model.forward_features(&JacobiModel::features(&inst.matrix)?)
}

// ---------------------------------------------------------------------------
// Diffusion coefficients

/// Graph inputs for a periodic system: edge `(A_ij, x_rel, y_rel)` for each
/// off-diagonal entry, vertex `A_ii`, global `h`.
pub fn diffusion_input_from(a: &CsrMatrix, coords: &[[f64; 2]], h: f64) -> Result<DiffusionInput> {
    if coords.len() != a.nrows() || !a.is_square() {
        return Err(dim("diffusion input: matrix and coordinates disagree"));
    }
    let mut edges = Vec::with_capacity(a.nnz());
    let mut eattr = Vec::with_capacity(3 * a.nnz());
    let mut diag = vec![0.0; a.nrows()];
    for (i, j, v) in a.triplets() {
        if i == j {
            diag[i] = v;
            continue;
        }
        edges.push((j, i));
        eattr.extend([
            v,
            fem::periodic_offset(coords[i][0], coords[j][0], h),
            fem::periodic_offset(coords[i][1], coords[j][1], h),
        ]);
    }
    let ne = edges.len();
    let graph = AttributedGraph::new(
        a.nrows(),
        edges,
        Attrs::new(ne, 3, eattr)?,
        Attrs::column(diag),
        vec![h],
    )?;
    DiffusionInput::new(graph)
}

#[derive(Clone, Debug)]
pub struct DiffusionSample {
    pub index: usize,
    pub input: DiffusionInput,
    /// `n x 2` rows `(alpha, beta)`.
    pub targets: Tensor,
}

pub fn prepare_diffusion(inst: &ProblemInstance) -> Result<DiffusionSample> {
    let t = inst
        .targets
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("diffusion sample needs coefficient targets".into()))?;
    Ok(DiffusionSample {
        index: inst.meta.index(),
        input: diffusion_input_from(&inst.matrix, &inst.coords, inst.meta.h())?,
        targets: Tensor::new(t.len(), 2, t.iter().flatten().copied().collect())?,
    })
}

/// `sum((alpha - alpha~)^2 + (beta - beta~)^2) / (2 N^2)` on tape.
pub fn diffusion_loss(tape: &mut Tape, pred: Var, targets: &Tensor) -> Result<Var> {
    if tape.value(pred).shape() != targets.shape() || targets.cols() != 2 {
        return Err(dim(format!(
            "diffusion loss: prediction {:?}, targets {:?}",
            tape.value(pred).shape(),
            targets.shape()
        )));
    }
    let t = tape.constant(targets.clone());
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / (2.0 * targets.rows() as f64)))
}

/// Untaped [`diffusion_loss`].
pub fn diffusion_loss_value(pred: &Tensor, targets: &Tensor) -> Result<f64> {
    if pred.shape() != targets.shape() || targets.cols() != 2 {
        return Err(dim("diffusion loss: prediction and targets disagree"));
    }
    let mut s = 0.0;
    for i in 0..targets.rows() {
        let da = pred.get(i, 0) - targets.get(i, 0);
        let db = pred.get(i, 1) - targets.get(i, 1);
        s += da * da + db * db;
    }
    Ok(s / (2.0 * targets.rows() as f64))
}

fn diffusion_loss_grad(params: &[f64], s: &DiffusionSample) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let flat = tape.param(Tensor::column(params.to_vec()));
    let pred = DiffusionModel::taped(&mut tape, flat, &s.input)?;
    let l = diffusion_loss(&mut tape, pred, &s.targets)?;
    let v = tape.value(l).item()?;
    Ok((v, tape.backward(l)?.wrt(&tape, flat).into_data()))
}

fn diffusion_loss_only(params: &[f64], s: &DiffusionSample) -> Result<f64> {
    let pred = DiffusionModel::from_params(params.to_vec())?.predict(&s.input)?;
    diffusion_loss_value(&pred, &s.targets)
}

/// Trains the diffusion model; batch gradients are summed in sample order.
pub fn train_diffusion(ds: &fem::Dataset, cfg: &DiffusionTrainConfig) -> Result<TrainOutcome> {
    let prep = |set: &[ProblemInstance]| set.par_iter().map(prepare_diffusion).collect::<Result<Vec<_>>>();
    let (train, val) = (prep(&ds.train)?, prep(&ds.val)?);
    let (params, best, curve) = run_loop(
        DiffusionModel::glorot(cfg.run.seed).params,
        &train,
        &val,
        &cfg.run,
        &diffusion_loss_grad,
        &diffusion_loss_only,
    )?;
    outcome(ModelKind::Diffusion, params, best, curve, cfg.run.seed)
}

/// Mean MSE of `model` on a set of instances.
pub fn diffusion_mse(model: &DiffusionModel, set: &[ProblemInstance]) -> Result<f64> {
    let v = set
        .par_iter()
        .map(|i| diffusion_loss_only(&model.params, &prepare_diffusion(i)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(v.iter().sum::<f64>() / v.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub theta_x: u32,
    pub theta_y: u32,
    pub mse: f64,
    pub in_training_region: bool,
}

/// MSE on isotropic instances `alpha = beta = cos^2(tx pi x) cos^2(ty pi y)`
/// for every `(tx, ty)` in `0..=theta_max` squared, on an `n x n` grid.
pub fn freq_sweep_eval(model: &DiffusionModel, theta_max: u32, n: usize, trained_theta_max: u32) -> Result<Vec<SweepPoint>> {
    let grid: Vec<(u32, u32)> = (0..=theta_max).flat_map(|ty| (0..=theta_max).map(move |tx| (tx, ty))).collect();
    grid.par_iter()
        .map(|&(tx, ty)| {
            let inst = ProblemInstance::diffusion(0, 0, n, fem::Thetas::isotropic(tx, ty))?;
            let mse = diffusion_loss_only(&model.params, &prepare_diffusion(&inst)?)?;
            Ok(SweepPoint {
                theta_x: tx,
                theta_y: ty,
                mse,
                in_training_region: tx <= trained_theta_max && ty <= trained_theta_max,
            })
        })
        .collect()
}

pub fn freq_sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("theta_x,theta_y,mse,in_training_region\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", p.theta_x, p.theta_y, p.mse, p.in_training_region);
    }
    s
}

/// Mean MSE over sweep points whose frequencies both lie in `lo..=hi`.
pub fn sweep_band_mean(points: &[SweepPoint], lo: u32, hi: u32) -> f64 {
    let sel: Vec<f64> = points
        .iter()
        .filter(|p| (lo..=hi).contains(&p.theta_x) && (lo..=hi).contains(&p.theta_y))
        .map(|p| p.mse)
        .collect();
    sel.iter().sum::<f64>() / sel.len().max(1) as f64
}

/// Mean prediction `(alpha~, beta~)` on the constant-coefficient instance
/// `alpha = 0.001`, `beta = 0.8` on an `n x n` periodic grid.
pub fn stencil_probe(model: &DiffusionModel, n: usize) -> Result<(f64, f64)> {
    let sys = fem::assemble_diffusion_periodic_with(n, &|_, _| (0.001, 0.8))?;
    let input = diffusion_input_from(&sys.matrix, &sys.coords, 1.0 / n as f64)?;
    let pred = model.predict(&input)?;
    let rows = pred.rows() as f64;
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..pred.rows() {
        a += pred.get(i, 0);
        b += pred.get(i, 1);
    }
    Ok((a / rows, b / rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        CsrMatrix::tridiagonal(n, -1.0, 2.0, -1.0)
    }

    #[test]
    fn jacobi_loss_trivial_cases() {
        let a = Arc::new(CsrMatrix::identity(4));
        let probes = Tensor::from_fn(4, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let mut t = Tape::new();
        let d = t.constant(Tensor::column(vec![0.0; 4]));
        let l = jacobi_loss(&mut t, d, a.clone(), &probes, 3).unwrap();
        assert_eq!(t.value(l).item().unwrap(), 1.0);
        let d = t.constant(Tensor::column(vec![1.0; 4]));
        let l = jacobi_loss(&mut t, d, a, &probes, 3).unwrap();
        assert_eq!(t.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn jacobi_loss_taped_matches_plain_and_fd() {
        let a = Arc::new(laplace_1d(5));
        let mut s = Stream::new(2, 0);
        let d: Vec<f64> = (0..5).map(|_| s.uniform_in(0.2, 0.6)).collect();
        let probes = Tensor::from_fn(5, 3, |_, _| s.normal());
        let mut t = Tape::new();
        let dv = t.param(Tensor::column(d.clone()));
        let l = jacobi_loss(&mut t, dv, a.clone(), &probes, 3).unwrap();
        let plain = jacobi_loss_value(&d, &a, &probes, 3).unwrap();
        assert!((t.value(l).item().unwrap() - plain).abs() < 1e-13);
        let chk = crate::autodiff::grad_check(
            |t, x| jacobi_loss(t, x, a.clone(), &probes, 3),
            &d,
            1e-6,
            None,
        )
        .unwrap();
        assert!(chk.max_rel_error < 1e-5, "{chk:?}");
    }

    #[test]
    fn omega_co_closed_forms() {
        assert!((omega_co(&CsrMatrix::identity(5)).unwrap() - 1.0).abs() < 1e-9);
        assert!((omega_co(&laplace_1d(10)).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn omega_co_matches_dense_oracle() {
        let mut s = Stream::new(5, 0);
        let b = DMatrix::from_fn(8, 8, |_, _| s.normal());
        let spd = &b * b.transpose() + DMatrix::identity(8, 8) * 0.5;
        let rows: Vec<Vec<f64>> = (0..8).map(|i| (0..8).map(|j| spd[(i, j)]).collect()).collect();
        let a = CsrMatrix::from_dense(&rows).unwrap();
        let dinv = DMatrix::from_fn(8, 8, |i, j| if i == j { 1.0 / spd[(i, i)].sqrt() } else { 0.0 });
        let ev = (&dinv * &spd * &dinv).symmetric_eigenvalues();
        let want = 2.0 / (ev.min() + ev.max());
        assert!((omega_co(&a).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn identity_projection_gives_one_minus_omega() {
        let a = CsrMatrix::identity(16);
        let (_, hf) = fem::dst_basis(4);
        for w in [1.0, 2.0 / 3.0, 0.25] {
            let r = eval_jacobi(&a, &omega_diagonal(&a, w), &hf, &EigOptions::default()).unwrap();
            for z in &r.values {
                assert!((z.re - (1.0 - w)).abs() < 1e-12 && z.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn subspace_solver_matches_dense() {
        let inst = ProblemInstance::jacobi(0, 0, 10, 0.01, 4).unwrap();
        let v = fem::dst_matrix(&inst.coords, &inst.dst_modes().unwrap().high);
        let d = omega_diagonal(&inst.matrix, 0.8);
        let dense = eval_jacobi(&inst.matrix, &d, &v, &EigOptions {
            solver: EigSolver::Dense,
            k: 5,
            ..EigOptions::default()
        })
        .unwrap();
        let sub = eval_jacobi(&inst.matrix, &d, &v, &EigOptions {
            solver: EigSolver::Subspace,
            k: 5,
            ..EigOptions::default()
        })
        .unwrap();
        assert!(sub.converged, "{sub:?}");
        for (p, q) in dense.values.iter().zip(&sub.values) {
            assert!((p.norm() - q.norm()).abs() < 1e-6, "{p} vs {q}");
        }
    }

    #[test]
    fn uniform_tridiagonal_projection_matches_symbol() {
        // 1D Dirichlet Laplacian: sine modes diagonalize D^-1 A exactly
        let n = 12;
        let a = laplace_1d(n);
        let hmodes: Vec<usize> = (n / 2 + 1..=n).collect();
        let coords: Vec<[f64; 2]> = (1..=n).map(|i| [i as f64 / (n + 1) as f64, 0.5]).collect();
        let v = fem::dst_matrix(&coords, &hmodes.iter().map(|&t| (t, 1)).collect::<Vec<_>>());
        let r = eval_jacobi(&a, &omega_diagonal(&a, 1.0), &v, &EigOptions {
            k: hmodes.len(),
            ..EigOptions::default()
        })
        .unwrap();
        let mut want: Vec<f64> = hmodes
            .iter()
            .map(|&t| (t as f64 * std::f64::consts::PI / (n + 1) as f64).cos())
            .collect();
        want.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        for (z, w) in r.values.iter().zip(&want) {
            assert!((z.norm() - w.abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn trivial_learned_diagonal_reproduces_baseline() {
        let ds = fem::gen_jacobi_dataset(&fem::JacobiDataConfig {
            n_y: 8,
            beta_min: 0.01,
            beta_max: 0.05,
            train: 1,
            val: 1,
            test: 2,
            seed: 4,
        })
        .unwrap();
        let rep = compare_methods(&ds.test, &|i| Ok(omega_diagonal(&i.matrix, 2.0 / 3.0)), &EigOptions::default()).unwrap();
        for m in &rep.matrices {
            assert_eq!(m.eigs[0], m.eigs[2]);
        }
        assert!(rep.differences(2).iter().all(|&d| d == 0.0));
        assert_eq!(rep.eig_csv().lines().count(), 1 + 2 * 4 * 10);
    }

    #[test]
    fn diffusion_loss_values() {
        let t = Tensor::from_fn(6, 2, |i, j| (i + j) as f64 * 0.1);
        let mut tape = Tape::new();
        let p = tape.constant(t.clone());
        let l = diffusion_loss(&mut tape, p, &t).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
        let shifted = Tensor::from_fn(6, 2, |i, j| t.get(i, j) + 1.0);
        let p = tape.constant(shifted.clone());
        let l = diffusion_loss(&mut tape, p, &t).unwrap();
        assert!((tape.value(l).item().unwrap() - 1.0).abs() < 1e-15);
        assert!((diffusion_loss_value(&shifted, &t).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn southeast_edge_convention() {
        let inst = ProblemInstance::diffusion(0, 0, 6, fem::Thetas::isotropic(1, 2)).unwrap();
        let input = diffusion_input_from(&inst.matrix, &inst.coords, inst.meta.h()).unwrap();
        let g = &input.graph;
        // vertex 7 = (1, 1); southeast neighbour (2, 0) = vertex 2; edge src = 2, dst = 7
        let e = g.edges().iter().position(|&(s, d)| s == 2 && d == 7).unwrap();
        let attrs = g.edge_attrs().row(e);
        assert_eq!(attrs, &[inst.matrix.get(7, 2).unwrap(), 1.0, -1.0]);
        // wrap: vertex 0 sees vertex 5 (x = 5h) as its west neighbour
        let e = g.edges().iter().position(|&(s, d)| s == 5 && d == 0).unwrap();
        assert_eq!(&g.edge_attrs().row(e)[1..], &[-1.0, 0.0]);
        for r in 0..g.num_edges() {
            let a = g.edge_attrs().row(r);
            assert!([-1.0, 0.0, 1.0].contains(&a[1]) && [-1.0, 0.0, 1.0].contains(&a[2]));
        }
    }

    #[test]
    fn sweep_grid_shape() {
        let pts = freq_sweep_eval(&DiffusionModel::zeros(), 2, 6, 1).unwrap();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts.iter().filter(|p| p.in_training_region).count(), 4);
        assert_eq!(freq_sweep_csv(&pts).lines().count(), 10);
    }
}
