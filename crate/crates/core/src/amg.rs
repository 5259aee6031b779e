//! Algebraic multigrid building blocks as graph network layers: strength of
//! connection, C/F splitting, direct interpolation and a two-level cycle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph_net::{apply_layer, matrix_to_graph, Attrs, GnLayer, Reducer};
use crate::kernels::gnn_jacobi;
use crate::sparse::{norm2, CsrMatrix};

/// Default strength threshold.
pub const DEFAULT_TAU: f64 = 0.25;

fn square(a: &CsrMatrix) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!("{}x{} matrix is not square", a.nrows(), a.ncols())))
    }
}

fn unit_interval(name: &str, t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in (0, 1], got {t}")))
    }
}

/// Smoothed-aggregation strength `S_ij = A_ij^2 / (A_ii A_jj)` on A's pattern.
pub fn soc_sa(a: &CsrMatrix) -> Result<CsrMatrix> {
    square(a)?;
    let d = a.diag();
    if let Some(row) = d.iter().position(|&x| x == 0.0) {
        return Err(Error::ZeroDiagonal { row });
    }
    let g = matrix_to_graph(a, true)?.with_vertex_attrs(Attrs::column(d))?;
    let layer = GnLayer::new().edge_update(1, |e| {
        vec![e.edge[0] * e.edge[0] / (e.dst[0] * e.src[0])]
    });
    let out = apply_layer(&g, &layer)?;
    a.with_values(out.edge_attrs().col(0))
}

/// `max_{j != i} (-A_ij)` over the incoming edges of each vertex.
fn max_negative_off_diagonal() -> Reducer {
    Reducer::custom(1, |m| {
        let owner = m.owner.expect("edge-to-vertex reduction");
        let best = m
            .items
            .iter()
            .filter(|(src, _)| *src != owner)
            .map(|(_, e)| -e[0])
            .fold(f64::NEG_INFINITY, f64::max);
        vec![if best.is_finite() { best } else { 0.0 }]
    })
}

/// Classic strength `S_ij = -A_ij / max_{k != i}(-A_ik)` on A's pattern,
/// diagonal included (its value is negative for a positive diagonal).
pub fn soc_classic_measure(a: &CsrMatrix) -> Result<CsrMatrix> {
    square(a)?;
    let g = matrix_to_graph(a, true)?.with_vertex_attrs(Attrs::zeros(a.n(), 1))?;
    let layer1 = GnLayer::new()
        .edge_to_vertex(vec![max_negative_off_diagonal()])
        .vertex_update(1, |v| vec![v.aggregated[0]]);
    let g = apply_layer(&g, &layer1)?;
    if let Some(row) = g.vertex_attrs().as_slice().iter().position(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "row {row} has no negative off-diagonal entry; classic strength is undefined"
        )));
    }
    let layer2 = GnLayer::new().edge_update(1, |e| vec![-e.edge[0] / e.dst[0]]);
    let g = apply_layer(&g, &layer2)?;
    a.with_values(g.edge_attrs().col(0))
}

/// Thresholded classic strength `step(S_ij - tau)` with strict inequality,
/// stored as 0/1 on A's pattern.
pub fn soc_classic(a: &CsrMatrix, tau: f64) -> Result<CsrMatrix> {
    unit_interval("tau", tau)?;
    let s = soc_classic_measure(a)?;
    let mask = s.values().iter().map(|&v| if v - tau > 0.0 { 1.0 } else { 0.0 }).collect();
    s.with_values(mask)
}

/// Absolute-value strength: `|A_ij| >= theta max_{k != i} |A_ik|`, diagonal
/// excluded. Rows whose off-diagonals are all zero have no strong entries.
pub fn soc_abs(a: &CsrMatrix, theta: f64) -> Result<CsrMatrix> {
    square(a)?;
    unit_interval("theta", theta)?;
    let g = matrix_to_graph(a, false)?.with_global_attrs(vec![theta]);
    let layer1 = GnLayer::new()
        .edge_update(1, |e| vec![e.edge[0].abs()])
        .edge_to_vertex(vec![Reducer::Max])
        .vertex_update(1, |v| vec![v.aggregated[0]]);
    let layer2 = GnLayer::new().edge_update(1, |e| {
        let m = e.dst[0];
        vec![if m > 0.0 && e.edge[0] >= e.global[0] * m { 1.0 } else { 0.0 }]
    });
    let g = apply_layer(&apply_layer(&g, &layer1)?, &layer2)?;
    let mut strong = g.edge_attrs().as_slice().iter();
    let mask = a
        .triplets()
        .map(|(i, j, _)| if i == j { 0.0 } else { *strong.next().expect("one edge per off-diagonal") })
        .collect();
    a.with_values(mask)
}

/// Coarse/fine labelling of the vertices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CfPartition {
    coarse: Vec<bool>,
    coarse_index: Vec<Option<usize>>,
}

impl CfPartition {
    /// Builds a partition from per-vertex coarse flags; coarse vertices are
    /// numbered in vertex order.
    pub fn from_coarse(coarse: Vec<bool>) -> Self {
        let mut next = 0;
        let coarse_index = coarse
            .iter()
            .map(|&c| {
                c.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Self { coarse, coarse_index }
    }

    pub fn len(&self) -> usize {
        self.coarse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coarse.is_empty()
    }

    pub fn is_coarse(&self, i: usize) -> bool {
        self.coarse[i]
    }

    /// Column of vertex `i` in the prolongation, if coarse.
    pub fn coarse_index(&self, i: usize) -> Option<usize> {
        self.coarse_index[i]
    }

    pub fn num_coarse(&self) -> usize {
        self.coarse.iter().filter(|&&c| c).count()
    }

    pub fn coarse_vertices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.coarse[i]).collect()
    }

    pub fn fine_vertices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.coarse[i]).collect()
    }
}

/// Greedy splitting on the strength graph: vertices are visited in index
/// order; an unlabelled vertex becomes C and every unlabelled vertex that
/// strongly depends on it (`S_hat[j][i] = 1`, `j != i`) becomes F.
pub fn cf_split_greedy(s_hat: &CsrMatrix) -> Result<CfPartition> {
    square(s_hat)?;
    let n = s_hat.n();
    let dependents = s_hat.transpose();
    let mut label: Vec<Option<bool>> = vec![None; n];
    for i in 0..n {
        if label[i].is_some() {
            continue;
        }
        label[i] = Some(true);
        let (cols, vals) = dependents.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j != i && v != 0.0 && label[j].is_none() {
                label[j] = Some(false);
            }
        }
    }
    Ok(CfPartition::from_coarse(
        label.into_iter().map(|l| l.unwrap_or(true)).collect(),
    ))
}

/// Direct interpolation `P` (`n x |C|`).
///
/// Layer 1 moves `C_j` onto each off-diagonal edge and reduces
/// `gamma_i = sum_j A_ij / sum_j A_ij C_j S_hat_ij`, giving
/// `alpha_i = gamma_i / A_ii`. Layer 2 writes `P_ij = (1 - C_i)(-A_ij alpha_i)`
/// on the strong coarse edges. C rows then receive a unit diagonal and the
/// F columns are dropped.
pub fn direct_interpolation(a: &CsrMatrix, s_hat: &CsrMatrix, cf: &CfPartition) -> Result<CsrMatrix> {
    square(a)?;
    let n = a.n();
    if s_hat.nrows() != n || s_hat.ncols() != n || cf.len() != n {
        return Err(Error::Dimension(format!(
            "matrix {n}x{n}, strength {}x{}, partition of {}",
            s_hat.nrows(),
            s_hat.ncols(),
            cf.len()
        )));
    }
    let diag = a.diag();
    if let Some(row) = diag.iter().position(|&x| x == 0.0) {
        return Err(Error::ZeroDiagonal { row });
    }
    let g = matrix_to_graph(a, false)?;
    // edges (A_ij, S_hat_ij); vertices (A_ii, C_i)
    let s_col: Vec<f64> = g
        .edges()
        .iter()
        .map(|&(src, dst)| s_hat.get(dst, src).unwrap_or(0.0))
        .collect();
    let edge_attrs = Attrs::hstack(&[g.edge_attrs(), &Attrs::column(s_col)])?;
    let c_col: Vec<f64> = (0..n).map(|i| if cf.is_coarse(i) { 1.0 } else { 0.0 }).collect();
    let g = g
        .with_edge_attrs(edge_attrs)?
        .with_vertex_attrs(Attrs::hstack(&[&Attrs::column(diag), &Attrs::column(c_col)])?)?;

    let sums = Reducer::custom(2, |m| {
        let total: f64 = m.items.iter().map(|(_, e)| e[0]).sum();
        let strong_coarse: f64 = m.items.iter().map(|(_, e)| e[0] * e[2] * e[1]).sum();
        vec![total, strong_coarse]
    });
    let layer1 = GnLayer::new()
        .edge_update(3, |e| vec![e.edge[0], e.edge[1], e.src[1]])
        .edge_to_vertex(vec![sums])
        .vertex_update(4, |v| {
            let (aii, ci) = (v.vertex[0], v.vertex[1]);
            let (total, strong_coarse) = (v.aggregated[0], v.aggregated[1]);
            let alpha = if ci == 0.0 && strong_coarse != 0.0 {
                total / strong_coarse / aii
            } else {
                0.0
            };
            vec![aii, ci, alpha, strong_coarse]
        });
    let g = apply_layer(&g, &layer1)?;
    for i in cf.fine_vertices() {
        if g.vertex_attrs().row(i)[3] == 0.0 {
            return Err(Error::Numerical(format!(
                "F row {i} has no strong coarse neighbour with nonzero weight"
            )));
        }
    }
    let layer2 = GnLayer::new().edge_update(4, |e| {
        let (aij, s, cj) = (e.edge[0], e.edge[1], e.edge[2]);
        let (ci, alpha) = (e.dst[1], e.dst[2]);
        vec![aij, s, cj, (1.0 - ci) * (-aij * alpha) * cj * s]
    });
    let g = apply_layer(&g, &layer2)?;

    let mut trip = Vec::new();
    for i in cf.coarse_vertices() {
        trip.push((i, cf.coarse_index(i).expect("coarse"), 1.0));
    }
    for (e, &(src, dst)) in g.edges().iter().enumerate() {
        let row = g.edge_attrs().row(e);
        if !cf.is_coarse(dst) && row[2] == 1.0 && row[1] != 0.0 {
            trip.push((dst, cf.coarse_index(src).expect("coarse column"), row[3]));
        }
    }
    CsrMatrix::from_triplets(n, cf.num_coarse(), &trip)
}

/// Direct loops over the CSR arrays, used as oracles for the layer forms.
pub mod reference {
    use super::CfPartition;
    use crate::sparse::CsrMatrix;

    fn map_values(a: &CsrMatrix, f: impl Fn(usize, usize, f64) -> f64) -> CsrMatrix {
        let v = a.triplets().map(|(i, j, x)| f(i, j, x)).collect();
        a.with_values(v).expect("same pattern")
    }

    pub fn soc_sa(a: &CsrMatrix) -> CsrMatrix {
        let d = a.diag();
        map_values(a, |i, j, x| x * x / (d[i] * d[j]))
    }

    pub fn soc_classic_measure(a: &CsrMatrix) -> CsrMatrix {
        let mut m = vec![f64::NEG_INFINITY; a.n()];
        for (i, j, x) in a.triplets() {
            if i != j {
                m[i] = m[i].max(-x);
            }
        }
        map_values(a, |i, _, x| -x / m[i])
    }

    pub fn soc_classic(a: &CsrMatrix, tau: f64) -> CsrMatrix {
        let s = soc_classic_measure(a);
        map_values(&s, |_, _, x| if x > tau { 1.0 } else { 0.0 })
    }

    pub fn soc_abs(a: &CsrMatrix, theta: f64) -> CsrMatrix {
        let mut m = vec![0.0f64; a.n()];
        for (i, j, x) in a.triplets() {
            if i != j {
                m[i] = m[i].max(x.abs());
            }
        }
        map_values(a, |i, j, x| if i != j && m[i] > 0.0 && x.abs() >= theta * m[i] { 1.0 } else { 0.0 })
    }

    pub fn direct_interpolation(a: &CsrMatrix, s_hat: &CsrMatrix, cf: &CfPartition) -> CsrMatrix {
        let mut trip = Vec::new();
        for i in 0..a.n() {
            if let Some(c) = cf.coarse_index(i) {
                trip.push((i, c, 1.0));
                continue;
            }
            let (cols, vals) = a.row(i);
            let strong = |j: usize| j != i && cf.is_coarse(j) && s_hat.get(i, j).unwrap_or(0.0) != 0.0;
            let mut total = 0.0;
            let mut coarse = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                if j != i {
                    total += v;
                    if strong(j) {
                        coarse += v * s_hat.get(i, j).unwrap_or(0.0);
                    }
                }
            }
            let alpha = total / coarse / a.get(i, i).unwrap_or(0.0);
            for (&j, &v) in cols.iter().zip(vals) {
                if strong(j) {
                    let sij = s_hat.get(i, j).unwrap_or(0.0);
                    trip.push((i, cf.coarse_index(j).expect("coarse"), -v * alpha * sij));
                }
            }
        }
        CsrMatrix::from_triplets(a.n(), cf.num_coarse(), &trip).expect("valid prolongation")
    }
}

/// Options for [`two_level_solve`].
#[derive(Clone, Debug)]
pub struct TwoLevelOptions {
    pub tau: f64,
    pub omega: f64,
    /// Jacobi sweeps before and after each coarse correction.
    pub sweeps: usize,
    pub max_iters: usize,
    /// Stop once `|b - A x| / |b|` falls below this.
    pub rel_tol: f64,
}

impl Default for TwoLevelOptions {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            omega: 2.0 / 3.0,
            sweeps: 1,
            max_iters: 30,
            rel_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TwoLevelResult {
    pub x: Vec<f64>,
    /// Relative residual before the first iteration and after each one.
    pub residuals: Vec<f64>,
    pub num_coarse: usize,
}

fn residual(a: &CsrMatrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    let ax = a.spmv(x).expect("conforming");
    b.iter().zip(&ax).map(|(p, q)| p - q).collect()
}

/// Two-level cycle from a zero initial guess with the coarse space built by
/// classic strength, greedy splitting and direct interpolation.
pub fn two_level_solve(a: &CsrMatrix, b: &[f64], opts: &TwoLevelOptions) -> Result<TwoLevelResult> {
    let s_hat = soc_classic(a, opts.tau)?;
    let cf = cf_split_greedy(&s_hat)?;
    let p = direct_interpolation(a, &s_hat, &cf)?;
    two_level_with_prolongation(a, b, &p, opts)
}

/// Two-level cycle with a caller-supplied prolongation:
/// Jacobi sweeps, `x += P (P^T A P)^-1 P^T (b - A x)`, Jacobi sweeps.
pub fn two_level_with_prolongation(
    a: &CsrMatrix,
    b: &[f64],
    p: &CsrMatrix,
    opts: &TwoLevelOptions,
) -> Result<TwoLevelResult> {
    square(a)?;
    let n = a.n();
    if b.len() != n || p.nrows() != n {
        return Err(Error::Dimension(format!(
            "A is {n}x{n}, b has {}, P is {}x{}",
            b.len(),
            p.nrows(),
            p.ncols()
        )));
    }
    let pt = p.transpose();
    let ap = DMatrix::from_fn(n, p.ncols(), |i, j| {
        let (cols, vals) = a.row(i);
        cols.iter().zip(vals).map(|(&k, &v)| v * p.get(k, j).unwrap_or(0.0)).sum()
    });
    let ptd = DMatrix::from_fn(p.ncols(), n, |i, j| pt.get(i, j).unwrap_or(0.0));
    let coarse = &ptd * &ap;
    let lu = coarse.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::Numerical("coarse matrix P^T A P is singular".into()));
    }

    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    let mut residuals = vec![if bnorm == 0.0 { 0.0 } else { 1.0 }];
    if bnorm == 0.0 {
        return Ok(TwoLevelResult { x, residuals, num_coarse: p.ncols() });
    }
    for _ in 0..opts.max_iters {
        x = gnn_jacobi(a, b, &x, opts.omega, opts.sweeps)?;
        let r = residual(a, b, &x);
        let rc = pt.spmv(&r)?;
        let ec = lu
            .solve(&DVector::from_vec(rc))
            .ok_or_else(|| Error::Numerical("coarse solve failed".into()))?;
        let e = p.spmv(ec.as_slice())?;
        x.iter_mut().zip(&e).for_each(|(xi, ei)| *xi += ei);
        x = gnn_jacobi(a, b, &x, opts.omega, opts.sweeps)?;
        let rel = norm2(&residual(a, b, &x)) / bnorm;
        residuals.push(rel);
        if !rel.is_finite() {
            return Err(Error::Numerical("two-level iteration diverged".into()));
        }
        if rel < opts.rel_tol {
            break;
        }
    }
    Ok(TwoLevelResult { x, residuals, num_coarse: p.ncols() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        CsrMatrix::tridiagonal(n, -1.0, 2.0, -1.0)
    }

    /// Constant-coefficient anisotropic diffusion stencil on a periodic
    /// `m x m` grid, rows ordered `y * m + x`.
    fn stencil_matrix(m: usize, c: f64, ns: f64, ew: f64, corner: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for y in 0..m {
            for x in 0..m {
                let i = y * m + x;
                for dy in [-1i64, 0, 1] {
                    for dx in [-1i64, 0, 1] {
                        let xx = (x as i64 + dx).rem_euclid(m as i64) as usize;
                        let yy = (y as i64 + dy).rem_euclid(m as i64) as usize;
                        let v = match (dx, dy) {
                            (0, 0) => c,
                            (0, _) => ns,
                            (_, 0) => ew,
                            _ => corner,
                        };
                        t.push((i, yy * m + xx, v));
                    }
                }
            }
        }
        CsrMatrix::from_triplets_summed(m * m, m * m, &t).unwrap()
    }

    #[test]
    fn soc_sa_diagonal_and_stencil() {
        let a = stencil_matrix(4, 16.0 / 6.0, -2.0 / 6.0, -2.0 / 6.0, -2.0 / 6.0);
        let s = soc_sa(&a).unwrap();
        for (i, j, v) in s.triplets() {
            let want = if i == j { 1.0 } else { 1.0 / 64.0 };
            assert!((v - want).abs() < 1e-15, "({i},{j}) = {v}");
        }
        assert_eq!(s.col_idx(), a.col_idx());
        assert_eq!(soc_sa(&a.scaled(-3.5)).unwrap(), s);
    }

    #[test]
    fn soc_sa_zero_diagonal() {
        let a = CsrMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(soc_sa(&a), Err(Error::ZeroDiagonal { row: 0 })));
    }

    #[test]
    fn soc_classic_laplacian_all_strong() {
        let a = laplace_1d(6);
        let s = soc_classic(&a, 0.25).unwrap();
        for (i, j, v) in s.triplets() {
            assert_eq!(v, if i == j { 0.0 } else { 1.0 });
        }
        let raw = soc_classic_measure(&a).unwrap();
        for (i, j, v) in raw.triplets() {
            if i != j {
                assert_eq!(v, 1.0);
            }
        }
    }

    #[test]
    fn soc_classic_anisotropic_stencil_drops_east_west() {
        let m = 5;
        let a = stencil_matrix(m, 1.068, -0.533, 0.266, -0.1335);
        let s = soc_classic(&a, 0.25).unwrap();
        let raw = soc_classic_measure(&a).unwrap();
        let i = 2 * m + 2;
        for y in 1..4 {
            for x in 1..4 {
                let j = y * m + x;
                let (dx, dy) = (x as i64 - 2, y as i64 - 2);
                // corners: 0.1335 / 0.533 = 0.2505 clears the threshold
                let strong = (dx == 0 && dy != 0) || (dx != 0 && dy != 0);
                assert_eq!(s.get(i, j).unwrap() == 1.0, strong, "offset ({dx},{dy})");
                if dx == 0 && dy != 0 {
                    assert!((raw.get(i, j).unwrap() - 1.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn soc_classic_tie_drops_and_positive_row_errors() {
        let a = CsrMatrix::from_dense(&[
            vec![2.0, -1.0, -0.25],
            vec![-1.0, 2.0, -1.0],
            vec![-0.25, -1.0, 2.0],
        ])
        .unwrap();
        let s = soc_classic(&a, 0.25).unwrap();
        assert_eq!(s.get(0, 2), Some(0.0));
        let bad = CsrMatrix::from_dense(&[vec![2.0, 1.0], vec![-1.0, 2.0]]).unwrap();
        match soc_classic(&bad, 0.25) {
            Err(Error::InvalidArgument(msg)) => assert!(msg.contains("row 0")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(soc_classic(&a, 0.0).is_err());
    }

    #[test]
    fn soc_abs_cases() {
        let a = laplace_1d(5);
        let s = soc_abs(&a, 0.5).unwrap();
        for (i, j, v) in s.triplets() {
            assert_eq!(v, if i == j { 0.0 } else { 1.0 });
        }
        let m = 5;
        let st = stencil_matrix(m, 1.068, -0.533, 0.266, -0.1335);
        let s = soc_abs(&st, 0.2).unwrap();
        let i = 2 * m + 2;
        for j in [i - m, i + m, i - 1, i + 1] {
            assert_eq!(s.get(i, j), Some(1.0));
        }
        let s = soc_abs(&st, 1.0).unwrap();
        assert_eq!(s.get(i, i - 1), Some(0.0));
        assert_eq!(s.get(i, i - m), Some(1.0));
        let z = CsrMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(soc_abs(&z, 0.5).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn greedy_split_traces() {
        let empty = CsrMatrix::identity(3).scaled(0.0);
        assert_eq!(cf_split_greedy(&empty).unwrap().num_coarse(), 3);
        let path = soc_classic(&laplace_1d(3), 0.25).unwrap();
        assert_eq!(cf_split_greedy(&path).unwrap().coarse_vertices(), vec![0, 2]);
        let five = soc_classic(&laplace_1d(5), 0.25).unwrap();
        let cf = cf_split_greedy(&five).unwrap();
        assert_eq!(cf.coarse_vertices(), vec![0, 2, 4]);
        assert_eq!(cf.coarse_index(4), Some(2));
        assert_eq!(cf.coarse_index(1), None);
    }

    #[test]
    fn interpolation_all_coarse_is_identity() {
        let a = laplace_1d(4);
        let s = soc_classic(&a, 0.25).unwrap();
        let cf = CfPartition::from_coarse(vec![true; 4]);
        assert_eq!(direct_interpolation(&a, &s, &cf).unwrap(), CsrMatrix::identity(4));
    }

    #[test]
    fn interpolation_on_laplacian() {
        let a = laplace_1d(5);
        let s = soc_classic(&a, 0.25).unwrap();
        let cf = cf_split_greedy(&s).unwrap();
        let p = direct_interpolation(&a, &s, &cf).unwrap();
        let want = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.0, 0.0, 1.0],
        ];
        assert_eq!(p.to_dense(), want);
    }

    #[test]
    fn interpolation_empty_strong_coarse_set_errors() {
        let a = laplace_1d(3);
        let s = a.with_values(vec![0.0; a.nnz()]).unwrap();
        let cf = CfPartition::from_coarse(vec![true, false, true]);
        match direct_interpolation(&a, &s, &cf) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("row 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_level_trivial_cases() {
        let a = laplace_1d(8);
        let r = two_level_solve(&a, &[0.0; 8], &TwoLevelOptions::default()).unwrap();
        assert_eq!(r.x, vec![0.0; 8]);
        let b: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let r = two_level_with_prolongation(&a, &b, &CsrMatrix::identity(8), &TwoLevelOptions::default())
            .unwrap();
        assert_eq!(r.residuals.len(), 2);
        assert!(r.residuals[1] < 1e-12);
    }

    #[test]
    fn two_level_beats_jacobi() {
        let n = 63;
        let a = laplace_1d(n);
        let b = vec![1.0; n];
        let opts = TwoLevelOptions::default();
        let r = two_level_solve(&a, &b, &opts).unwrap();
        let x = gnn_jacobi(&a, &b, &vec![0.0; n], opts.omega, 2 * opts.sweeps).unwrap();
        let ax = a.spmv(&x).unwrap();
        let rj = norm2(&b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<_>>()) / norm2(&b);
        assert!(r.residuals[1] < rj, "{} vs {rj}", r.residuals[1]);
    }

    #[test]
    fn singular_coarse_matrix_errors() {
        let a = laplace_1d(3);
        let p = CsrMatrix::from_triplets(3, 1, &[]).unwrap();
        assert!(two_level_with_prolongation(&a, &[1.0; 3], &p, &TwoLevelOptions::default()).is_err());
    }
}
