//! `gen-data`, `train`, `eval` and `demo-amg`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use gnn_linalg::amg::{self, two_level_solve, TwoLevelOptions};
use gnn_linalg::fem::{assemble_laplace_dirichlet, Dataset, InstanceMeta, ProblemInstance, QuadMesh};
use gnn_linalg::kernels::gnn_jacobi;
use gnn_linalg::nn::Checkpoint;
use gnn_linalg::sparse::norm2;
use gnn_linalg::train::{
    compare_methods, diffusion_mse, freq_sweep_csv, freq_sweep_eval, model_diagonal, omega_diagonal,
    stencil_probe, train_diffusion, train_jacobi, TrainOutcome, METHODS,
};

use crate::config::{EvalSection, Kind, RunConfig, Split};
use crate::{data, svg};

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replace an existing dataset directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub kind: Kind,
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset directory; defaults to `<output_dir>/data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Also write `loss_curve.svg`.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub kind: Kind,
    #[arg(long, required_unless_present = "omega")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate the constant weight `d_i = omega / A_ii` in place of a
    /// checkpoint (jacobi only).
    #[arg(long, conflicts_with = "checkpoint")]
    pub omega: Option<f64>,
    /// Supplies the `eval` section and the default output directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to `<output_dir>/eval` with `--config`,
    /// else `./eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<Split>,
    /// Eigenvalues reported per matrix and method.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub sweep_theta_max: Option<u32>,
    #[arg(long)]
    pub sweep_n: Option<usize>,
    /// Also write SVG plots.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct DemoAmgArgs {
    /// Grid points per direction of the unit-square mesh.
    #[arg(long, default_value_t = 20)]
    pub n_y: usize,
    /// Half-width of a thin band of elements; uniform mesh when absent.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Mesh column the band is placed at.
    #[arg(long)]
    pub band_col: Option<usize>,
    #[arg(long, default_value_t = amg::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 1)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 30)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub rel_tol: f64,
    /// CSV path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_config(path: &Path, seed: Option<u64>, output_dir: Option<&PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = output_dir {
        cfg.output_dir = d.clone();
    }
    Ok(cfg)
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let cfg = load_config(&args.config, args.seed, args.output_dir.as_ref())?;
    let dc = cfg.data_config();
    let ds = data::generate(&dc)?;
    let root = cfg.data_dir();
    let m = data::write(&root, &dc, &ds, args.force)?;
    println!(
        "wrote {} {} instances ({} train, {} val, {} test) to {}; sha256 {}",
        m.entries().count(),
        m.kind().name(),
        m.splits.train.len(),
        m.splits.val.len(),
        m.splits.test.len(),
        root.display(),
        m.sha256
    );
    Ok(())
}

fn curve_svg(title: &str, out: &TrainOutcome) -> String {
    let train: Vec<(f64, f64)> = out.curve.iter().map(|r| (r.epoch as f64, r.train_loss)).collect();
    let val: Vec<(f64, f64)> = out.curve.iter().map(|r| (r.epoch as f64, r.val_loss)).collect();
    svg::log_lines(title, "epoch", "loss", &[("train", train), ("val", val)])
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.config, args.seed, args.output_dir.as_ref())?;
    if cfg.kind() != args.kind {
        bail!("config describes a {} run, not {}", cfg.kind().name(), args.kind.name());
    }
    cfg.train.epochs = args.epochs.or(cfg.train.epochs);
    cfg.train.batch_size = args.batch_size.or(cfg.train.batch_size);
    cfg.train.lr = args.lr.or(cfg.train.lr);
    let data_dir = args.data.clone().unwrap_or_else(|| cfg.data_dir());
    let (_, ds) = data::load(&data_dir, args.kind)?;
    let out = match args.kind {
        Kind::Jacobi => train_jacobi(&ds, &cfg.jacobi_train())?,
        Kind::Diffusion => train_diffusion(&ds, &cfg.diffusion_train())?,
    };
    let params = out.checkpoint.params.len();
    if let Some(want) = cfg.model.parameters {
        if want != params {
            bail!("model has {params} trainable parameters, config expects {want}");
        }
    }
    let dir = cfg.train_dir();
    fs::create_dir_all(&dir)?;
    out.checkpoint.save(&dir.join("checkpoint.json"))?;
    write(&dir.join("loss_curve.csv"), &out.loss_curve_csv())?;
    if args.svg {
        write(&dir.join("loss_curve.svg"), &curve_svg(&format!("{} training", args.kind.name()), &out))?;
    }
    let best = &out.curve[out.best_epoch];
    println!(
        "{} model, {params} parameters: best epoch {} of {}, train loss {:.6e}, val loss {:.6e}; wrote {}",
        args.kind.name(),
        out.best_epoch,
        out.curve.len() - 1,
        best.train_loss,
        best.val_loss,
        dir.display()
    );
    Ok(())
}

fn split_of(ds: &Dataset, split: Split) -> &[ProblemInstance] {
    match split {
        Split::Train => &ds.train,
        Split::Val => &ds.val,
        Split::Test => &ds.test,
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.config.as_deref().map(RunConfig::load).transpose()?;
    if let Some(c) = &cfg {
        if c.kind() != args.kind {
            bail!("config describes a {} run, not {}", c.kind().name(), args.kind.name());
        }
    }
    let mut section = cfg.as_ref().map(|c| c.eval.clone()).unwrap_or_default();
    section.split = args.split.or(section.split);
    section.eig_k = args.k.or(section.eig_k);
    section.sweep_theta_max = args.sweep_theta_max.or(section.sweep_theta_max);
    section.sweep_n = args.sweep_n.or(section.sweep_n);
    let out_dir = match (&args.out, &cfg) {
        (Some(o), _) => o.clone(),
        (None, Some(c)) => c.eval_dir(),
        (None, None) => PathBuf::from("eval"),
    };
    let (_, ds) = data::load(&args.data, args.kind)?;
    let set = split_of(&ds, section.split.unwrap_or_default());
    if set.is_empty() {
        bail!("the selected split of {} is empty", args.data.display());
    }
    let checkpoint = args.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    if let Some(ck) = &checkpoint {
        if ck.model != args.kind.model() {
            bail!("checkpoint holds a {:?} model, not {}", ck.model, args.kind.name());
        }
    }
    fs::create_dir_all(&out_dir)?;
    match args.kind {
        Kind::Jacobi => eval_jacobi(args, &section, set, checkpoint.as_ref(), &out_dir),
        Kind::Diffusion => {
            let Some(ck) = checkpoint else { bail!("--omega applies to the jacobi experiment only") };
            eval_diffusion(args, &section, &ds, set, &ck, &out_dir)
        }
    }
}

fn eval_jacobi(
    args: &EvalArgs,
    section: &EvalSection,
    set: &[ProblemInstance],
    checkpoint: Option<&Checkpoint>,
    out_dir: &Path,
) -> Result<()> {
    let opts = section.eig_options();
    let report = match (checkpoint, args.omega) {
        (Some(ck), _) => {
            let model = ck.jacobi()?;
            let r = compare_methods(set, &model_diagonal(&model), &opts)?;
            r
        }
        (None, Some(w)) => {
            let mut r = compare_methods(set, &move |inst: &ProblemInstance| Ok(omega_diagonal(&inst.matrix, w)), &opts)?;
            r.learned_label = format!("omega_{w}");
            r
        }
        (None, None) => bail!("pass --checkpoint or --omega"),
    };
    write(&out_dir.join("eig_report.csv"), &report.eig_csv())?;
    write(&out_dir.join("winners.csv"), &report.winners_csv())?;
    write(&out_dir.join("differences.csv"), &report.differences_csv())?;
    write(&out_dir.join("summary.csv"), &report.summary_csv())?;
    if args.svg {
        for (m, name) in METHODS.iter().enumerate().skip(1) {
            let title = format!("{name} radius minus {} radius", report.learned_label);
            write(
                &out_dir.join(format!("differences_{name}.svg")),
                &svg::histogram(&title, "difference in spectral radius", &report.differences(m), 20),
            )?;
        }
    }
    for m in 1..METHODS.len() {
        println!(
            "{} beats {} on {:.1}% of {} matrices",
            report.learned_label,
            METHODS[m],
            100.0 * report.learned_beats(m),
            report.matrices.len()
        );
    }
    println!("wrote {}", out_dir.display());
    if !report.all_converged() {
        return Err(crate::Numerical("some eigenvalue solves did not converge; see the converged column".into()).into());
    }
    Ok(())
}

fn eval_diffusion(
    args: &EvalArgs,
    section: &EvalSection,
    ds: &Dataset,
    set: &[ProblemInstance],
    checkpoint: &Checkpoint,
    out_dir: &Path,
) -> Result<()> {
    let model = checkpoint.diffusion()?;
    let mut csv = String::from("matrix_id,n,mse\n");
    let mut total = 0.0;
    for inst in set {
        let mse = diffusion_mse(&model, std::slice::from_ref(inst))?;
        let n = match inst.meta {
            InstanceMeta::Diffusion { n, .. } => n,
            InstanceMeta::Jacobi { .. } => bail!("instance {} is not a diffusion instance", inst.meta.index()),
        };
        total += mse;
        let _ = writeln!(csv, "{},{n},{mse}", inst.meta.index());
    }
    write(&out_dir.join("test_mse.csv"), &csv)?;
    let trained_max = ds
        .train
        .iter()
        .filter_map(|i| match i.meta {
            InstanceMeta::Diffusion { thetas: t, .. } => Some(t.alpha_x.max(t.alpha_y).max(t.beta_x).max(t.beta_y)),
            InstanceMeta::Jacobi { .. } => None,
        })
        .max()
        .unwrap_or(0);
    let theta_max = section.sweep_theta_max.unwrap_or(10);
    let n = section.sweep_n.unwrap_or(28);
    let sweep = freq_sweep_eval(&model, theta_max, n, trained_max)?;
    write(&out_dir.join("freq_sweep.csv"), &freq_sweep_csv(&sweep))?;
    let stencil_n = section.stencil_n.unwrap_or(n);
    let (a, b) = stencil_probe(&model, stencil_n)?;
    write(
        &out_dir.join("stencil.csv"),
        &format!("alpha_target,beta_target,alpha_pred,beta_pred\n0.001,0.8,{a},{b}\n"),
    )?;
    if args.svg {
        let mses: Vec<f64> = sweep.iter().map(|p| p.mse).collect();
        write(&out_dir.join("freq_sweep_mse.svg"), &svg::histogram("sweep MSE", "mse", &mses, 20))?;
    }
    println!(
        "mean MSE {:.6e} over {} instances; sweep 0..={theta_max} at N = {n}; stencil probe ({a:.6}, {b:.6}); wrote {}",
        total / set.len() as f64,
        set.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn demo_amg(args: &DemoAmgArgs) -> Result<()> {
    let matrix = match args.beta {
        Some(beta) => ProblemInstance::jacobi(0, 0, args.n_y, beta, args.band_col.unwrap_or(args.n_y / 2))?.matrix,
        None => assemble_laplace_dirichlet(&QuadMesh::uniform(args.n_y)?)?.matrix,
    };
    let a = &matrix;
    let b = vec![1.0; a.n()];
    let opts = TwoLevelOptions {
        tau: args.tau,
        omega: args.omega,
        sweeps: args.sweeps,
        max_iters: args.max_iters,
        rel_tol: args.rel_tol,
    };
    let tl = two_level_solve(a, &b, &opts)?;
    let mut csv = String::from("iteration,two_level,jacobi\n");
    let mut x = vec![0.0; a.n()];
    let nb = norm2(&b);
    for (it, r) in tl.residuals.iter().enumerate() {
        if it > 0 {
            x = gnn_jacobi(a, &b, &x, args.omega, 2 * args.sweeps)?;
        }
        let ax = a.spmv(&x)?;
        let rj = norm2(&b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<_>>()) / nb;
        let _ = writeln!(csv, "{it},{r},{rj}");
    }
    let summary = format!(
        "{}x{} matrix, {} coarse vertices; relative residual {:.3e} after {} two-level iterations",
        a.n(),
        a.n(),
        tl.num_coarse,
        tl.residuals.last().copied().unwrap_or(f64::NAN),
        tl.residuals.len() - 1
    );
    match &args.out {
        Some(p) => {
            write(p, &csv)?;
            println!("{summary}; wrote {}", p.display());
        }
        None => {
            print!("{csv}");
            eprintln!("{summary}");
        }
    }
    Ok(())
}
