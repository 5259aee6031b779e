//! Quadrilateral meshes, bilinear finite-element assembly, discrete sine
//! modes and the two dataset generators.
//!
//! Vertices are numbered row-major with `y` outer: vertex `(col, row)` has
//! id `row * ncols + col`. Elements list their corners counterclockwise
//! starting at the lower left.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{streams, Stream};
use crate::sparse::{read_matrix_market, write_matrix_market};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    /// Index of the original grid column the band is centred on.
    pub col: usize,
    pub x: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadMesh {
    pub coords: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 4]>,
    pub boundary: Vec<bool>,
    pub ncols: usize,
    pub nrows: usize,
    pub band: Option<Band>,
}

impl QuadMesh {
    /// Tensor-product mesh on the unit square from sorted column and row
    /// coordinates.
    pub fn tensor(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() < 2 || ys.len() < 2 {
            return Err(Error::InvalidArgument("a mesh needs at least two columns and two rows".into()));
        }
        for w in xs.windows(2).chain(ys.windows(2)) {
            if w[1] <= w[0] {
                return Err(Error::InvalidArgument("mesh coordinates must be strictly increasing".into()));
            }
        }
        let (nc, nr) = (xs.len(), ys.len());
        let mut coords = Vec::with_capacity(nc * nr);
        let mut boundary = Vec::with_capacity(nc * nr);
        for (r, &y) in ys.iter().enumerate() {
            for (c, &x) in xs.iter().enumerate() {
                coords.push([x, y]);
                boundary.push(c == 0 || r == 0 || c + 1 == nc || r + 1 == nr);
            }
        }
        let mut elements = Vec::with_capacity((nc - 1) * (nr - 1));
        for r in 0..nr - 1 {
            for c in 0..nc - 1 {
                let v = r * nc + c;
                elements.push([v, v + 1, v + 1 + nc, v + nc]);
            }
        }
        Ok(Self {
            coords,
            elements,
            boundary,
            ncols: nc,
            nrows: nr,
            band: None,
        })
    }

    /// `n_y x n_y` vertices, spacing `1 / (n_y - 1)`.
    pub fn uniform(n_y: usize) -> Result<Self> {
        let g = grid(n_y);
        Self::tensor(&g, &g)
    }

    pub fn num_vertices(&self) -> usize {
        self.coords.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }
}

fn grid(n: usize) -> Vec<f64> {
    let h = 1.0 / (n as f64 - 1.0);
    (0..n).map(|k| if k + 1 == n { 1.0 } else { k as f64 * h }).collect()
}

/// Uniform `n_y x n_y` grid with two extra vertex columns at
/// `x_band ± beta`, where `x_band` is grid column `band_col`.
pub fn build_band_mesh(n_y: usize, beta: f64, band_col: usize) -> Result<QuadMesh> {
    if n_y < 6 {
        return Err(Error::InvalidArgument(format!("band mesh needs n_y >= 6, got {n_y}")));
    }
    if band_col < 2 || band_col > n_y - 3 {
        return Err(Error::InvalidArgument(format!(
            "band column {band_col} outside 2..={}",
            n_y - 3
        )));
    }
    let h = 1.0 / (n_y as f64 - 1.0);
    if !(beta > 0.0 && beta < 0.5 * h) {
        return Err(Error::InvalidArgument(format!(
            "band half-width {beta} must lie in (0, h/2) with h = {h}"
        )));
    }
    let ys = grid(n_y);
    let xb = ys[band_col];
    let mut xs = Vec::with_capacity(n_y + 2);
    for (c, &x) in ys.iter().enumerate() {
        if c == band_col {
            xs.extend([xb - beta, xb, xb + beta]);
        } else {
            xs.push(x);
        }
    }
    let mut mesh = QuadMesh::tensor(&xs, &ys)?;
    mesh.band = Some(Band { col: band_col, x: xb, beta });
    Ok(mesh)
}

const GAUSS: f64 = 0.577_350_269_189_625_8;
const REF: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

/// Bilinear element stiffness for `-div(diag(a, b) grad u)` with the
/// coefficients sampled at the 2x2 Gauss points.
pub fn element_stiffness(
    xy: &[[f64; 2]; 4],
    coef: &dyn Fn(f64, f64) -> (f64, f64),
) -> Result<[[f64; 4]; 4]> {
    let mut k = [[0.0; 4]; 4];
    for gx in [-GAUSS, GAUSS] {
        for gy in [-GAUSS, GAUSS] {
            let mut dxi = [0.0; 4];
            let mut deta = [0.0; 4];
            let mut shape = [0.0; 4];
            for a in 0..4 {
                let [sa, ta] = REF[a];
                shape[a] = 0.25 * (1.0 + sa * gx) * (1.0 + ta * gy);
                dxi[a] = 0.25 * sa * (1.0 + ta * gy);
                deta[a] = 0.25 * ta * (1.0 + sa * gx);
            }
            let (mut j11, mut j12, mut j21, mut j22) = (0.0, 0.0, 0.0, 0.0);
            let (mut px, mut py) = (0.0, 0.0);
            for a in 0..4 {
                j11 += dxi[a] * xy[a][0];
                j12 += dxi[a] * xy[a][1];
                j21 += deta[a] * xy[a][0];
                j22 += deta[a] * xy[a][1];
                px += shape[a] * xy[a][0];
                py += shape[a] * xy[a][1];
            }
            let det = j11 * j22 - j12 * j21;
            if !(det > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "degenerate or clockwise element (Jacobian {det})"
                )));
            }
            let mut dx = [0.0; 4];
            let mut dy = [0.0; 4];
            for a in 0..4 {
                dx[a] = (j22 * dxi[a] - j12 * deta[a]) / det;
                dy[a] = (-j21 * dxi[a] + j11 * deta[a]) / det;
            }
            let (ca, cb) = coef(px, py);
            for a in 0..4 {
                for b in 0..4 {
                    k[a][b] += det * (ca * (dx[a] * dx[b]) + cb * (dy[a] * dy[b]));
                }
            }
        }
    }
    Ok(k)
}

/// Dirichlet Laplace system: the matrix over interior vertices plus the
/// mesh id and coordinates of every unknown.
#[derive(Clone, Debug)]
pub struct DirichletSystem {
    pub matrix: CsrMatrix,
    pub dofs: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
}

pub fn assemble_laplace_dirichlet(mesh: &QuadMesh) -> Result<DirichletSystem> {
    let mut dof = vec![usize::MAX; mesh.num_vertices()];
    let mut dofs = Vec::new();
    for (v, &b) in mesh.boundary.iter().enumerate() {
        if !b {
            dof[v] = dofs.len();
            dofs.push(v);
        }
    }
    if dofs.is_empty() {
        return Err(Error::InvalidArgument("mesh has no interior vertices".into()));
    }
    let unit = |_: f64, _: f64| (1.0, 1.0);
    let mut trips = Vec::with_capacity(16 * mesh.num_elements());
    for el in &mesh.elements {
        let xy = el.map(|v| mesh.coords[v]);
        let k = element_stiffness(&xy, &unit)?;
        for a in 0..4 {
            for b in 0..4 {
                let (i, j) = (dof[el[a]], dof[el[b]]);
                if i != usize::MAX && j != usize::MAX {
                    trips.push((i, j, k[a][b]));
                }
            }
        }
    }
    let matrix = CsrMatrix::from_triplets_summed(dofs.len(), dofs.len(), &trips)?;
    let coords = dofs.iter().map(|&v| mesh.coords[v]).collect();
    Ok(DirichletSystem { matrix, dofs, coords })
}

/// `cos(tx pi x)^2 cos(ty pi y)^2`.
pub fn cos2_field(tx: u32, ty: u32, x: f64, y: f64) -> f64 {
    let cx = (tx as f64 * PI * x).cos();
    let cy = (ty as f64 * PI * y).cos();
    cx * cx * (cy * cy)
}

/// Frequencies of the two coefficient fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thetas {
    pub alpha_x: u32,
    pub alpha_y: u32,
    pub beta_x: u32,
    pub beta_y: u32,
}

impl Thetas {
    pub fn isotropic(tx: u32, ty: u32) -> Self {
        Self {
            alpha_x: tx,
            alpha_y: ty,
            beta_x: tx,
            beta_y: ty,
        }
    }

    pub fn coefficients(&self, x: f64, y: f64) -> (f64, f64) {
        (
            cos2_field(self.alpha_x, self.alpha_y, x, y),
            cos2_field(self.beta_x, self.beta_y, x, y),
        )
    }
}

/// Periodic `n x n` diffusion system with vertex coordinates and the
/// coefficient values `(alpha, beta)` at every vertex.
#[derive(Clone, Debug)]
pub struct PeriodicSystem {
    pub matrix: CsrMatrix,
    pub coords: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
}

/// Assembles on the doubly periodic unit square with spacing `1/n`.
pub fn assemble_diffusion_periodic_with(
    n: usize,
    coef: &(dyn Fn(f64, f64) -> (f64, f64) + Sync),
) -> Result<PeriodicSystem> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!("periodic mesh needs n >= 4, got {n}")));
    }
    let h = 1.0 / n as f64;
    let id = |c: usize, r: usize| (r % n) * n + (c % n);
    let mut trips = Vec::with_capacity(16 * n * n);
    for r in 0..n {
        for c in 0..n {
            let corners = [(c, r), (c + 1, r), (c + 1, r + 1), (c, r + 1)];
            let xy = corners.map(|(cc, rr)| [cc as f64 * h, rr as f64 * h]);
            let k = element_stiffness(&xy, coef)?;
            let ids = corners.map(|(cc, rr)| id(cc, rr));
            for a in 0..4 {
                for b in 0..4 {
                    trips.push((ids[a], ids[b], k[a][b]));
                }
            }
        }
    }
    let matrix = CsrMatrix::from_triplets_summed(n * n, n * n, &trips)?;
    let mut coords = Vec::with_capacity(n * n);
    let mut targets = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let (x, y) = (c as f64 * h, r as f64 * h);
            coords.push([x, y]);
            let (a, b) = coef(x, y);
            targets.push([a, b]);
        }
    }
    Ok(PeriodicSystem { matrix, coords, targets })
}

pub fn assemble_diffusion_periodic(n: usize, thetas: Thetas) -> Result<PeriodicSystem> {
    assemble_diffusion_periodic_with(n, &move |x, y| thetas.coefficients(x, y))
}

/// Relative offset `(x_j - x_i) / h` on the periodic grid, wrapped into
/// `{-1, 0, 1}`.
pub fn periodic_offset(from: f64, to: f64, h: f64) -> f64 {
    let d = ((to - from) / h).round();
    let n = (1.0 / h).round();
    let w = d - n * (d / n).round();
    if w == 0.0 {
        0.0
    } else {
        w
    }
}

/// Indices `(theta_x, theta_y)` of the discrete sine modes on an
/// `nx x ny` grid of unknowns, split into low and high frequency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DstModes {
    pub nx: usize,
    pub ny: usize,
    pub low: Vec<(usize, usize)>,
    pub high: Vec<(usize, usize)>,
}

impl DstModes {
    /// Low frequency means `2 theta_x <= nx` and `2 theta_y <= ny`.
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut low = Vec::new();
        let mut high = Vec::new();
        for ty in 1..=ny {
            for tx in 1..=nx {
                if 2 * tx <= nx && 2 * ty <= ny {
                    low.push((tx, ty));
                } else {
                    high.push((tx, ty));
                }
            }
        }
        Self { nx, ny, low, high }
    }
}

/// One unit-norm column `sin(tx pi x) sin(ty pi y)` sampled at `coords`.
pub fn dst_column(coords: &[[f64; 2]], mode: (usize, usize)) -> Vec<f64> {
    let (tx, ty) = (mode.0 as f64, mode.1 as f64);
    let mut v: Vec<f64> = coords
        .iter()
        .map(|&[x, y]| (tx * PI * x).sin() * (ty * PI * y).sin())
        .collect();
    let s = crate::sparse::norm2(&v);
    if s > 0.0 {
        v.iter_mut().for_each(|a| *a /= s);
    }
    v
}

/// Columns for `modes` sampled at `coords`, as an `n x modes.len()` tensor.
pub fn dst_matrix(coords: &[[f64; 2]], modes: &[(usize, usize)]) -> Tensor {
    let n = coords.len();
    let k = modes.len();
    let mut data = vec![0.0; n * k];
    for (c, &m) in modes.iter().enumerate() {
        for (r, v) in dst_column(coords, m).into_iter().enumerate() {
            data[r * k + c] = v;
        }
    }
    Tensor::new(n, k, data).expect("shape")
}

/// Uniform grid of `n x n` unknowns at spacing `1/(n+1)`, rows `y` outer.
pub fn interior_grid(n: usize) -> Vec<[f64; 2]> {
    let h = 1.0 / (n as f64 + 1.0);
    let mut out = Vec::with_capacity(n * n);
    for r in 1..=n {
        for c in 1..=n {
            out.push([c as f64 * h, r as f64 * h]);
        }
    }
    out
}

/// `(V_lf, V_hf)` on the uniform interior grid of `n x n` unknowns.
pub fn dst_basis(n: usize) -> (Tensor, Tensor) {
    let coords = interior_grid(n);
    let modes = DstModes::new(n, n);
    (dst_matrix(&coords, &modes.low), dst_matrix(&coords, &modes.high))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceMeta {
    Jacobi {
        seed: u64,
        index: usize,
        n_y: usize,
        h: f64,
        beta: f64,
        band_col: usize,
        band_x: f64,
    },
    Diffusion {
        seed: u64,
        index: usize,
        n: usize,
        h: f64,
        thetas: Thetas,
    },
}

impl InstanceMeta {
    pub fn h(&self) -> f64 {
        match self {
            InstanceMeta::Jacobi { h, .. } | InstanceMeta::Diffusion { h, .. } => *h,
        }
    }

    pub fn index(&self) -> usize {
        match self {
            InstanceMeta::Jacobi { index, .. } | InstanceMeta::Diffusion { index, .. } => *index,
        }
    }
}

/// One dataset entry.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub meta: InstanceMeta,
    pub matrix: CsrMatrix,
    pub coords: Vec<[f64; 2]>,
    /// Per-vertex `(alpha, beta)` for diffusion instances.
    pub targets: Option<Vec<[f64; 2]>>,
}

impl ProblemInstance {
    pub fn jacobi(seed: u64, index: usize, n_y: usize, beta: f64, band_col: usize) -> Result<Self> {
        let mesh = build_band_mesh(n_y, beta, band_col)?;
        let sys = assemble_laplace_dirichlet(&mesh)?;
        let band = mesh.band.expect("band mesh");
        Ok(Self {
            meta: InstanceMeta::Jacobi {
                seed,
                index,
                n_y,
                h: 1.0 / (n_y as f64 - 1.0),
                beta,
                band_col,
                band_x: band.x,
            },
            matrix: sys.matrix,
            coords: sys.coords,
            targets: None,
        })
    }

    pub fn diffusion(seed: u64, index: usize, n: usize, thetas: Thetas) -> Result<Self> {
        let sys = assemble_diffusion_periodic(n, thetas)?;
        Ok(Self {
            meta: InstanceMeta::Diffusion {
                seed,
                index,
                n,
                h: 1.0 / n as f64,
                thetas,
            },
            matrix: sys.matrix,
            coords: sys.coords,
            targets: Some(sys.targets),
        })
    }

    /// Sine modes of the uniform interior grid underlying a Jacobi
    /// instance: `(n_y - 2)^2` modes, sampled at the band mesh unknowns by
    /// [`dst_matrix`].
    pub fn dst_modes(&self) -> Result<DstModes> {
        match self.meta {
            InstanceMeta::Jacobi { n_y, .. } => Ok(DstModes::new(n_y - 2, n_y - 2)),
            InstanceMeta::Diffusion { .. } => Err(Error::InvalidArgument(
                "sine modes are defined for Dirichlet instances only".into(),
            )),
        }
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_matrix_market(&self.matrix, dir.join("matrix.mtx"))?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        let mut s = String::from("x,y\n");
        for [x, y] in &self.coords {
            let _ = writeln!(s, "{x:?},{y:?}");
        }
        fs::write(dir.join("coords.csv"), s)?;
        if let Some(t) = &self.targets {
            let mut s = String::from("alpha,beta\n");
            for [a, b] in t {
                let _ = writeln!(s, "{a:?},{b:?}");
            }
            fs::write(dir.join("targets.csv"), s)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let matrix = read_matrix_market(dir.join("matrix.mtx"))?;
        let meta: InstanceMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        let coords = read_pairs(&dir.join("coords.csv"))?;
        let tpath = dir.join("targets.csv");
        let targets = if tpath.exists() { Some(read_pairs(&tpath)?) } else { None };
        let inst = Self {
            meta,
            matrix,
            coords,
            targets,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        let n = self.matrix.nrows();
        if !self.matrix.is_square() || self.coords.len() != n {
            return Err(Error::Dimension(format!(
                "instance has a {}x{} matrix and {} coordinates",
                n,
                self.matrix.ncols(),
                self.coords.len()
            )));
        }
        match (&self.meta, &self.targets) {
            (InstanceMeta::Diffusion { .. }, Some(t)) if t.len() == n => Ok(()),
            (InstanceMeta::Jacobi { .. }, None) => Ok(()),
            _ => Err(Error::Dimension("targets do not match the instance kind".into())),
        }
    }
}

fn read_pairs(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        let mut it = line.split(',');
        let mut next = || -> Result<f64> {
            let f = it.next().ok_or_else(|| bad("expected two fields".into()))?;
            f.trim().parse().map_err(|e| bad(format!("{f:?}: {e}")))
        };
        out.push([next()?, next()?]);
    }
    Ok(out)
}

/// Train, validation and test instances.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<ProblemInstance>,
    pub val: Vec<ProblemInstance>,
    pub test: Vec<ProblemInstance>,
}

impl Dataset {
    fn split(mut all: Vec<ProblemInstance>, train: usize, val: usize) -> Self {
        let test = all.split_off(train + val);
        let val_v = all.split_off(train);
        Self {
            train: all,
            val: val_v,
            test,
        }
    }

    pub fn splits(&self) -> [(&'static str, &[ProblemInstance]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobiDataConfig {
    pub n_y: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl JacobiDataConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            n_y: 20,
            beta_min: 0.002,
            beta_max: 0.02,
            train: 60,
            val: 20,
            test: 20,
            seed,
        }
    }

    pub fn paper(seed: u64) -> Self {
        Self {
            n_y: 38,
            beta_min: 0.001,
            beta_max: 0.013,
            train: 800,
            val: 50,
            test: 150,
            seed,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Instance `index`: `beta ~ U[beta_min, beta_max)`, band column uniform on
/// `2..=n_y-3`, both drawn from stream `(seed, index)`.
pub fn jacobi_instance(cfg: &JacobiDataConfig, index: usize) -> Result<ProblemInstance> {
    let mut rng = Stream::new(cfg.seed, streams::JACOBI_DATA + index as u64);
    let beta = rng.uniform_in(cfg.beta_min, cfg.beta_max);
    let col = rng.int_in(2, cfg.n_y as u64 - 3) as usize;
    ProblemInstance::jacobi(cfg.seed, index, cfg.n_y, beta, col)
}

pub fn gen_jacobi_dataset(cfg: &JacobiDataConfig) -> Result<Dataset> {
    if cfg.train == 0 || cfg.val == 0 || cfg.test == 0 {
        return Err(Error::InvalidArgument("every split needs at least one instance".into()));
    }
    let h = 1.0 / (cfg.n_y as f64 - 1.0);
    if !(cfg.beta_min > 0.0 && cfg.beta_min <= cfg.beta_max && cfg.beta_max < 0.5 * h) {
        return Err(Error::InvalidArgument(format!(
            "beta range [{}, {}] must lie in (0, h/2) with h = {h}",
            cfg.beta_min, cfg.beta_max
        )));
    }
    let all = (0..cfg.total())
        .into_par_iter()
        .map(|k| jacobi_instance(cfg, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::split(all, cfg.train, cfg.val))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionDataConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub theta_max: u32,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl DiffusionDataConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            n_min: 24,
            n_max: 32,
            theta_max: 4,
            train: 100,
            val: 30,
            test: 20,
            seed,
        }
    }

    pub fn paper(seed: u64) -> Self {
        Self {
            n_min: 80,
            n_max: 100,
            theta_max: 6,
            train: 700,
            val: 200,
            test: 100,
            seed,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Instance `index`: `n` uniform on `n_min..=n_max`, then the four
/// frequencies uniform on `0..=theta_max`, from stream `(seed, index)`.
pub fn diffusion_instance(cfg: &DiffusionDataConfig, index: usize) -> Result<ProblemInstance> {
    let mut rng = Stream::new(cfg.seed, streams::DIFFUSION_DATA + index as u64);
    let n = rng.int_in(cfg.n_min as u64, cfg.n_max as u64) as usize;
    let mut t = || rng.int_in(0, cfg.theta_max as u64) as u32;
    let thetas = Thetas {
        alpha_x: t(),
        alpha_y: t(),
        beta_x: t(),
        beta_y: t(),
    };
    ProblemInstance::diffusion(cfg.seed, index, n, thetas)
}

pub fn gen_diffusion_dataset(cfg: &DiffusionDataConfig) -> Result<Dataset> {
    if cfg.train == 0 || cfg.val == 0 || cfg.test == 0 {
        return Err(Error::InvalidArgument("every split needs at least one instance".into()));
    }
    if cfg.n_min < 4 || cfg.n_min > cfg.n_max {
        return Err(Error::InvalidArgument(format!(
            "grid size range [{}, {}] is invalid (need 4 <= n_min <= n_max)",
            cfg.n_min, cfg.n_max
        )));
    }
    let all = (0..cfg.total())
        .into_par_iter()
        .map(|k| diffusion_instance(cfg, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::split(all, cfg.train, cfg.val))
}

/// Reads `<dir>/<split>/<index>` directories written by
/// [`ProblemInstance::write_dir`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for (name, slot) in [("train", &mut ds.train), ("val", &mut ds.val), ("test", &mut ds.test)] {
        let sub = dir.join(name);
        if !sub.exists() {
            continue;
        }
        let mut entries: Vec<_> = fs::read_dir(&sub)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        for p in entries {
            slot.push(ProblemInstance::read_dir(&p)?);
        }
        slot.sort_by_key(|i| i.meta.index());
    }
    Ok(ds)
}

/// Directory name of an instance inside its split.
pub fn instance_dir_name(index: usize) -> String {
    format!("{index:05}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stencil(a: &CsrMatrix, i: usize, j: usize) -> f64 {
        a.get(i, j).unwrap_or(0.0)
    }

    #[test]
    fn figure_mesh_counts() {
        let m = build_band_mesh(8, 0.05, 3).unwrap();
        assert_eq!(m.num_vertices(), 80);
        assert_eq!(m.num_elements(), 63);
        assert_eq!(m.ncols, 10);
        for n_y in [6, 9, 20] {
            let m = build_band_mesh(n_y, 0.01, 2).unwrap();
            assert_eq!(m.num_vertices(), n_y * n_y + 2 * n_y);
            assert_eq!(m.num_elements(), (n_y + 1) * (n_y - 1));
        }
    }

    #[test]
    fn band_mesh_rejects_bad_requests() {
        let h = 1.0 / 7.0;
        assert!(build_band_mesh(8, h, 3).is_err());
        assert!(build_band_mesh(8, 0.5 * h, 3).is_err());
        assert!(build_band_mesh(8, 0.0, 3).is_err());
        assert!(build_band_mesh(8, 0.05, 1).is_err());
        assert!(build_band_mesh(8, 0.05, 6).is_err());
    }

    #[test]
    fn uniform_interior_stencil() {
        let mesh = QuadMesh::uniform(7).unwrap();
        let sys = assemble_laplace_dirichlet(&mesh).unwrap();
        let a = &sys.matrix;
        assert_eq!(a.n(), 25);
        // interior unknown (2, 2) of the 5x5 block
        let c = 2 * 5 + 2;
        assert!((stencil(a, c, c) - 16.0 / 6.0).abs() < 1e-12);
        for d in [1, 5, 4, 6] {
            assert!((stencil(a, c, c - d) + 2.0 / 6.0).abs() < 1e-12);
            assert!((stencil(a, c, c + d) + 2.0 / 6.0).abs() < 1e-12);
        }
        assert_eq!(a.row(c).0.len(), 9);
        assert_eq!(a.symmetry_defect(), 0.0);
    }

    #[test]
    fn band_node_stencil() {
        let (n_y, beta, col) = (10, 0.02, 4);
        let mesh = build_band_mesh(n_y, beta, col).unwrap();
        let sys = assemble_laplace_dirichlet(&mesh).unwrap();
        let h = 1.0 / (n_y as f64 - 1.0);
        let r2 = (h / beta) * (h / beta);
        let s = beta / (6.0 * h);
        // band centre column is mesh column col + 1; unknowns skip the boundary
        let nx = mesh.ncols - 2;
        let c = 4 * nx + col;
        let a = &sys.matrix;
        assert!((sys.coords[c][0] - mesh.band.unwrap().x).abs() < 1e-15);
        assert!((stencil(a, c, c) - s * (8.0 + 8.0 * r2)).abs() < 1e-12);
        assert!((stencil(a, c, c - nx) - s * (-4.0 + 2.0 * r2)).abs() < 1e-12);
        assert!((stencil(a, c, c + nx) - s * (-4.0 + 2.0 * r2)).abs() < 1e-12);
        assert!((stencil(a, c, c - 1) - s * (2.0 - 4.0 * r2)).abs() < 1e-12);
        assert!((stencil(a, c, c + 1) - s * (2.0 - 4.0 * r2)).abs() < 1e-12);
        for d in [nx - 1, nx + 1] {
            assert!((stencil(a, c, c - d) - s * (-1.0 - r2)).abs() < 1e-12);
            assert!((stencil(a, c, c + d) - s * (-1.0 - r2)).abs() < 1e-12);
        }
    }

    #[test]
    fn band_stencil_formula_at_unit_ratio() {
        let r2: f64 = 1.0;
        let s = 1.0 / 6.0;
        assert_eq!(s * (8.0 + 8.0 * r2), 16.0 / 6.0);
        assert_eq!(s * (-4.0 + 2.0 * r2), -2.0 / 6.0);
        assert_eq!(s * (2.0 - 4.0 * r2), -2.0 / 6.0);
        assert_eq!(s * (-1.0 - r2), -2.0 / 6.0);
    }

    #[test]
    fn anisotropic_diffusion_stencil() {
        let sys = assemble_diffusion_periodic_with(8, &|_, _| (0.001, 0.8)).unwrap();
        let a = &sys.matrix;
        let n = 8;
        let c = 3 * n + 3;
        let want = [(0, 1.068), (n, -0.533), (1, 0.266), (n + 1, -0.1335), (n - 1, -0.1335)];
        for (d, v) in want {
            assert!((stencil(a, c, c + d) - v).abs() < 5e-4, "offset {d}");
            assert!((stencil(a, c, c - d) - v).abs() < 5e-4, "offset -{d}");
        }
    }

    #[test]
    fn unit_coefficient_periodic_stencil() {
        let sys = assemble_diffusion_periodic(6, Thetas::isotropic(0, 0)).unwrap();
        let a = &sys.matrix;
        for i in 0..36 {
            let (cols, vals) = a.row(i);
            assert_eq!(cols.len(), 9);
            for (&j, &v) in cols.iter().zip(vals) {
                let want = if i == j { 8.0 / 3.0 } else { -1.0 / 3.0 };
                assert!((v - want).abs() < 1e-13);
            }
        }
        assert!(sys.targets.iter().all(|t| *t == [1.0, 1.0]));
    }

    #[test]
    fn periodic_rows_sum_to_zero() {
        let t = Thetas {
            alpha_x: 2,
            alpha_y: 1,
            beta_x: 0,
            beta_y: 3,
        };
        let sys = assemble_diffusion_periodic(9, t).unwrap();
        let ones = vec![1.0; 81];
        let r = sys.matrix.spmv(&ones).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(sys.matrix.symmetry_defect(), 0.0);
    }

    #[test]
    fn periodic_offsets_wrap() {
        let h = 0.125;
        assert_eq!(periodic_offset(0.0, 0.875, h), -1.0);
        assert_eq!(periodic_offset(0.875, 0.0, h), 1.0);
        assert_eq!(periodic_offset(0.5, 0.375, h), -1.0);
        assert_eq!(periodic_offset(0.5, 0.5, h), 0.0);
    }

    #[test]
    fn dst_orthonormal_and_counts() {
        let n = 6;
        let (lf, hf) = dst_basis(n);
        assert_eq!(lf.cols(), 9);
        assert_eq!(hf.cols(), 27);
        let v: Vec<Vec<f64>> = (0..n * n)
            .map(|r| [lf.row_slice(r), hf.row_slice(r)].concat())
            .collect();
        for p in 0..n * n {
            for q in 0..n * n {
                let d: f64 = v.iter().map(|row| row[p] * row[q]).sum();
                let want = if p == q { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
        let m = DstModes::new(38, 38);
        assert_eq!(m.low.len() + m.high.len(), 1444);
        assert_eq!(m.low.len(), 361);
        let m = DstModes::new(7, 7);
        assert_eq!(m.low.len(), 9);
    }

    #[test]
    fn jacobi_instances_are_deterministic_and_spd() {
        let mut cfg = JacobiDataConfig::desk(11);
        cfg.train = 3;
        cfg.val = 1;
        cfg.test = 1;
        let a = gen_jacobi_dataset(&cfg).unwrap();
        let b = gen_jacobi_dataset(&cfg).unwrap();
        let mut probe = Stream::new(0, 0);
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.matrix, y.matrix);
            assert_eq!(x.meta, y.meta);
            assert_eq!(x.matrix.n(), 20 * 18);
            assert_eq!(x.matrix.symmetry_defect(), 0.0);
            for _ in 0..20 {
                let v: Vec<f64> = (0..x.matrix.n()).map(|_| probe.normal()).collect();
                assert!(x.matrix.quadratic_form(&v).unwrap() > 0.0);
            }
            let modes = x.dst_modes().unwrap();
            assert_eq!(modes.low.len(), 81);
            assert_eq!(modes.high.len(), 18 * 18 - 81);
        }
        assert_eq!(a.val.len(), 1);
        assert_eq!(a.test[0].meta.index(), 4);
    }

    #[test]
    fn instance_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let inst = diffusion_instance(&DiffusionDataConfig::desk(3), 5).unwrap();
        inst.write_dir(dir.path()).unwrap();
        let back = ProblemInstance::read_dir(dir.path()).unwrap();
        assert_eq!(back.matrix, inst.matrix);
        assert_eq!(back.meta, inst.meta);
        assert_eq!(back.coords, inst.coords);
        assert_eq!(back.targets, inst.targets);
        let j = jacobi_instance(&JacobiDataConfig::desk(3), 0).unwrap();
        let d2 = dir.path().join("j");
        j.write_dir(&d2).unwrap();
        let back = ProblemInstance::read_dir(&d2).unwrap();
        assert_eq!(back.meta, j.meta);
        assert!(back.targets.is_none());
    }
}
