//! `gnnla kernel`: a graph network kernel next to its direct oracle.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use gnn_linalg::amg::{self, cf_split_greedy};
use gnn_linalg::fem::{assemble_diffusion_periodic_with, assemble_laplace_dirichlet, QuadMesh};
use gnn_linalg::kernels::{self, reference};
use gnn_linalg::sparse::read_matrix_market;
use gnn_linalg::{CsrMatrix, Stream};

use crate::Numerical;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelName {
    Spmv,
    SpmvNoSelfEdges,
    WeightedNorm,
    Jacobi,
    Chebyshev,
    Power,
    SocSa,
    SocClassic,
    SocAbs,
    Interpolation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Demo {
    /// `tridiag(-1, 2, -1)` of order `--size`.
    Laplace1d,
    /// Bilinear Poisson matrix on a uniform `--size` grid with Dirichlet
    /// boundary.
    Poisson,
    /// Periodic constant-coefficient diffusion with `alpha = 0.001`,
    /// `beta = 0.8` on a `--size` grid.
    Aniso,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    pub name: KernelName,
    /// Matrix Market file; a demo matrix is used when absent.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "laplace1d")]
    pub demo: Demo,
    #[arg(long, default_value_t = 10)]
    pub size: usize,
    /// Input vector (x, x0 or the power-method start), one value per line
    /// or comma separated; random in [-1, 1] when absent.
    #[arg(long)]
    pub vector: Option<PathBuf>,
    /// Right-hand side for jacobi and chebyshev; all ones when absent.
    #[arg(long)]
    pub rhs: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub omega: f64,
    /// Jacobi sweeps or power iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Chebyshev iterations.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long, default_value_t = amg::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = amg::DEFAULT_TAU)]
    pub theta: f64,
    /// Largest accepted relative discrepancy.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rows or entries printed per result.
    #[arg(long, default_value_t = 12)]
    pub show: usize,
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("{}: bad number {t:?}", path.display())))
        .collect()
}

fn demo_matrix(demo: Demo, size: usize) -> Result<CsrMatrix> {
    Ok(match demo {
        Demo::Laplace1d => CsrMatrix::tridiagonal(size, -1.0, 2.0, -1.0),
        Demo::Poisson => assemble_laplace_dirichlet(&QuadMesh::uniform(size)?)?.matrix,
        Demo::Aniso => assemble_diffusion_periodic_with(size, &|_, _| (0.001, 0.8))?.matrix,
    })
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if num == 0.0 {
        0.0
    } else {
        num / den.max(f64::MIN_POSITIVE)
    }
}

fn show_vector(label: &str, v: &[f64], show: usize) {
    let head: Vec<String> = v.iter().take(show).map(|x| format!("{x:.16e}")).collect();
    let more = if v.len() > show { format!(", ... ({} more)", v.len() - show) } else { String::new() };
    println!("{label}: [{}{more}]", head.join(", "));
}

fn show_matrix(label: &str, m: &CsrMatrix, show: usize) {
    println!("{label}:");
    for i in 0..m.nrows().min(show) {
        let (cols, vals) = m.row(i);
        let row: Vec<String> = cols.iter().zip(vals).map(|(j, v)| format!("{j}:{v}")).collect();
        println!("  row {i}: {}", row.join(" "));
    }
    if m.nrows() > show {
        println!("  ... ({} more rows)", m.nrows() - show);
    }
}

fn show_pattern(label: &str, m: &CsrMatrix, show: usize) {
    println!("{label}:");
    for i in 0..m.nrows().min(show) {
        let (cols, vals) = m.row(i);
        let strong: Vec<String> = cols.iter().zip(vals).filter(|(_, &v)| v != 0.0).map(|(j, _)| j.to_string()).collect();
        println!("  row {i}: [{}]", strong.join(", "));
    }
    if m.nrows() > show {
        println!("  ... ({} more rows)", m.nrows() - show);
    }
}

fn matrix_diff(a: &CsrMatrix, b: &CsrMatrix) -> f64 {
    if a.row_ptr() != b.row_ptr() || a.col_idx() != b.col_idx() || a.ncols() != b.ncols() {
        return f64::INFINITY;
    }
    rel_diff(a.values(), b.values())
}

/// Extremal eigenvalue estimates of a symmetric positive definite `a` by
/// power iteration on `a` and on `lambda_max I - a`.
fn spectral_bounds(a: &CsrMatrix, start: &[f64]) -> Result<(f64, f64)> {
    const ITERS: usize = 2000;
    let (_, hi) = reference::power_method(a, start, ITERS);
    let trip: Vec<(usize, usize, f64)> = a
        .triplets()
        .map(|(i, j, v)| (i, j, -v))
        .chain((0..a.n()).map(|i| (i, i, hi)))
        .collect();
    let shifted = CsrMatrix::from_triplets_summed(a.n(), a.n(), &trip)?;
    let (_, mu) = reference::power_method(&shifted, start, ITERS);
    Ok((hi - mu, hi))
}

pub fn run(args: &KernelArgs) -> Result<()> {
    let a = match &args.matrix {
        Some(p) => read_matrix_market(p).with_context(|| format!("reading {}", p.display()))?,
        None => demo_matrix(args.demo, args.size)?,
    };
    if !a.is_square() {
        bail!("kernels need a square matrix, got {}x{}", a.nrows(), a.ncols());
    }
    let n = a.n();
    let x = match &args.vector {
        Some(p) => read_vector(p)?,
        None => {
            let mut s = Stream::new(args.seed, 0);
            (0..n).map(|_| s.uniform_in(-1.0, 1.0)).collect()
        }
    };
    if x.len() != n {
        bail!("vector has {} entries, matrix has {n} rows", x.len());
    }
    let b = match &args.rhs {
        Some(p) => read_vector(p)?,
        None => vec![1.0; n],
    };
    if b.len() != n {
        bail!("right-hand side has {} entries, matrix has {n} rows", b.len());
    }
    println!("matrix: {n}x{n}, {} stored entries", a.nnz());
    let show = args.show;
    let disc = match args.name {
        KernelName::Spmv | KernelName::SpmvNoSelfEdges => {
            let g = kernels::gnn_spmv(&a, &x, args.name == KernelName::Spmv)?;
            let o = reference::spmv(&a, &x);
            show_vector("gnn", &g, show);
            show_vector("oracle", &o, show);
            rel_diff(&g, &o)
        }
        KernelName::WeightedNorm => {
            let g = kernels::gnn_weighted_norm(&a, &x)?;
            let o = reference::weighted_norm(&a, &x);
            println!("gnn: {g:.16e}\noracle: {o:.16e}");
            rel_diff(&[g], &[o])
        }
        KernelName::Jacobi => {
            let iters = args.iters.unwrap_or(1);
            let g = kernels::gnn_jacobi(&a, &b, &x, args.omega, iters)?;
            let o = reference::jacobi(&a, &b, &x, args.omega, iters);
            show_vector("gnn", &g, show);
            show_vector("oracle", &o, show);
            rel_diff(&g, &o)
        }
        KernelName::Chebyshev => {
            let (lo, hi) = match (args.lambda_min, args.lambda_max) {
                (Some(lo), Some(hi)) => (lo, hi),
                (lo, hi) => {
                    let (elo, ehi) = spectral_bounds(&a, &x)?;
                    (lo.unwrap_or(elo), hi.unwrap_or(ehi))
                }
            };
            if !(lo > 0.0 && lo < hi) {
                return Err(Numerical(format!("spectral bounds [{lo}, {hi}] are not positive and ordered")).into());
            }
            println!("spectral bounds: [{lo:.10e}, {hi:.10e}], {} iterations", args.n);
            let g = kernels::gnn_chebyshev(&a, &b, &x, lo, hi, args.n)?;
            let o = reference::chebyshev(&a, &b, &x, lo, hi, args.n);
            show_vector("gnn", &g, show);
            show_vector("oracle", &o, show);
            rel_diff(&g, &o)
        }
        KernelName::Power => {
            let iters = args.iters.unwrap_or(50);
            let g = kernels::gnn_power_method(&a, &x, iters)?;
            let (v, lambda) = reference::power_method(&a, &x, iters);
            show_vector("gnn vector", &g.vector, show);
            show_vector("oracle vector", &v, show);
            println!("gnn rayleigh: {:.16e}\noracle rayleigh: {lambda:.16e}", g.lambda);
            rel_diff(&g.vector, &v).max(rel_diff(&[g.lambda], &[lambda]))
        }
        KernelName::SocSa => {
            let g = amg::soc_sa(&a)?;
            let o = amg::reference::soc_sa(&a);
            show_matrix("gnn", &g, show);
            show_matrix("oracle", &o, show);
            matrix_diff(&g, &o)
        }
        KernelName::SocClassic => {
            let g = amg::soc_classic(&a, args.tau)?;
            let o = amg::reference::soc_classic(&a, args.tau);
            show_pattern(&format!("gnn strong connections (tau {})", args.tau), &g, show);
            show_pattern("oracle strong connections", &o, show);
            matrix_diff(&g, &o)
        }
        KernelName::SocAbs => {
            let g = amg::soc_abs(&a, args.theta)?;
            let o = amg::reference::soc_abs(&a, args.theta);
            show_pattern(&format!("gnn strong connections (theta {})", args.theta), &g, show);
            show_pattern("oracle strong connections", &o, show);
            matrix_diff(&g, &o)
        }
        KernelName::Interpolation => {
            let s_hat = amg::soc_classic(&a, args.tau)?;
            let cf = cf_split_greedy(&s_hat)?;
            let g = amg::direct_interpolation(&a, &s_hat, &cf)?;
            let o = amg::reference::direct_interpolation(&a, &s_hat, &cf);
            println!("coarse vertices: {} of {n}", cf.num_coarse());
            show_matrix("gnn P", &g, show);
            show_matrix("oracle P", &o, show);
            matrix_diff(&g, &o)
        }
    };
    println!("max relative discrepancy: {disc:.3e} (tol {:.1e})", args.tol);
    if disc.is_nan() || disc > args.tol {
        return Err(Numerical(format!("discrepancy {disc:.3e} exceeds {:.1e}", args.tol)).into());
    }
    Ok(())
}
