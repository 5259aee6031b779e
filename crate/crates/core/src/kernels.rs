//! Classical iterative kernels expressed as graph network layers.
//!
//! Every kernel maps the matrix onto a graph with [`matrix_to_graph`], loads
//! its vectors as vertex attributes and runs a fixed sequence of layers
//! through [`apply_layer`]. Sums over incoming edges run in stored column
//! order, so single-layer results agree bit-for-bit with the CSR loops in
//! [`crate::sparse`].

use crate::error::{dim, Error, Result};
use crate::graph_net::{apply_layer, matrix_to_graph, AttributedGraph, Attrs, GnLayer, Reducer};
use crate::sparse::{check_finite, CsrMatrix};

/// Stacks equal-length columns into a vertex attribute block.
fn columns(cols: &[&[f64]]) -> Attrs {
    let n = cols.first().map_or(0, |c| c.len());
    let mut data = Vec::with_capacity(n * cols.len());
    for i in 0..n {
        data.extend(cols.iter().map(|c| c[i]));
    }
    Attrs::new(n, cols.len(), data).expect("columns share a length")
}

fn check_len(a: &CsrMatrix, name: &str, v: &[f64]) -> Result<()> {
    if !a.is_square() {
        return Err(dim(format!("{}x{} matrix is not square", a.nrows(), a.ncols())));
    }
    if v.len() != a.n() {
        return Err(dim(format!("{name} has length {}, matrix is {}x{}", v.len(), a.n(), a.n())));
    }
    check_finite(name, v)
}

fn nonzero_diagonal(a: &CsrMatrix) -> Result<Vec<f64>> {
    let d = a.diag();
    match d.iter().position(|&x| x == 0.0) {
        Some(row) => Err(Error::ZeroDiagonal { row }),
        None => Ok(d),
    }
}

/// Edge update keeping `A_ij` and writing `c_ij = A_ij * v_j` for vertex
/// attribute column `col`; the summed message is `aggregated[1]`.
fn times_source(col: usize) -> impl Fn(&crate::graph_net::EdgeInput<'_>) -> Vec<f64> {
    move |e| vec![e.edge[0], e.edge[0] * e.src[col]]
}

/// `y = A x`. With self-edges the diagonal travels on the edges; without,
/// it sits on the vertex and is added in the vertex update.
pub fn gnn_spmv(a: &CsrMatrix, x: &[f64], self_edges: bool) -> Result<Vec<f64>> {
    check_len(a, "x", x)?;
    let g = matrix_to_graph(a, self_edges)?;
    let (g, layer) = if self_edges {
        let g = g.with_vertex_attrs(columns(&[x]))?;
        let layer = GnLayer::new()
            .edge_update(2, times_source(0))
            .edge_to_vertex(vec![Reducer::Sum])
            .vertex_update(1, |v| vec![v.aggregated[1]]);
        (g, layer)
    } else {
        let diag = g.vertex_attrs().col(0);
        let g = g.with_vertex_attrs(columns(&[&diag, x]))?;
        let layer = GnLayer::new()
            .edge_update(2, times_source(1))
            .edge_to_vertex(vec![Reducer::Sum])
            .vertex_update(1, |v| vec![v.aggregated[1] + v.vertex[0] * v.vertex[1]]);
        (g, layer)
    };
    Ok(apply_layer(&g, &layer)?.vertex_attrs().col(0))
}

/// `sqrt(x^T W x)`, finished in the global update.
pub fn gnn_weighted_norm(w: &CsrMatrix, x: &[f64]) -> Result<f64> {
    check_len(w, "x", x)?;
    let g = matrix_to_graph(w, true)?.with_vertex_attrs(columns(&[x]))?;
    let layer = GnLayer::new()
        .edge_update(2, times_source(0))
        .edge_to_vertex(vec![Reducer::Sum])
        .vertex_update(1, |v| vec![v.vertex[0] * v.aggregated[1]])
        .vertex_to_global(vec![Reducer::Sum])
        .global_update(1, |g| vec![g.vertices[0]]);
    let q = apply_layer(&g, &layer)?.global_attrs()[0];
    if q < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "x^T W x = {q:e} is negative; W does not define a norm"
        )));
    }
    Ok(q.sqrt())
}

/// `iters` sweeps of `x <- x + omega D^-1 (b - A x)`.
pub fn gnn_jacobi(a: &CsrMatrix, b: &[f64], x0: &[f64], omega: f64, iters: usize) -> Result<Vec<f64>> {
    check_len(a, "b", b)?;
    check_len(a, "x0", x0)?;
    let diag = nonzero_diagonal(a)?;
    let mut g = matrix_to_graph(a, true)?
        .with_vertex_attrs(columns(&[&diag, b, x0]))?
        .with_global_attrs(vec![omega]);
    let layer = GnLayer::new()
        .edge_update(2, times_source(2))
        .edge_to_vertex(vec![Reducer::Sum])
        .vertex_update(3, |v| {
            let (aii, bi, xi) = (v.vertex[0], v.vertex[1], v.vertex[2]);
            vec![aii, bi, xi + v.global[0] / aii * (bi - v.aggregated[1])]
        });
    for _ in 0..iters {
        g = apply_layer(&g, &layer)?;
    }
    Ok(g.vertex_attrs().col(2))
}

/// Chebyshev iteration for an SPD system with known spectral bounds.
///
/// The preamble (`r = b - A x0`, `theta`, `delta`, `sigma`, `rho`,
/// `d = r / theta`) runs once; each of the `n` iterations is three layers
/// updating `x`, then `r` with `rho_prior = rho; rho = 1/(2 sigma - rho)`
/// in that order, then `d`.
pub fn gnn_chebyshev(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    lambda_min: f64,
    lambda_max: f64,
    n: usize,
) -> Result<Vec<f64>> {
    check_len(a, "b", b)?;
    check_len(a, "x0", x0)?;
    if !(lambda_min > 0.0 && lambda_min < lambda_max && lambda_max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "Chebyshev needs 0 < lambda_min < lambda_max, got [{lambda_min}, {lambda_max}]"
        )));
    }
    let ax = gnn_spmv(a, x0, true)?;
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, yi)| bi - yi).collect();
    let theta = (lambda_max + lambda_min) / 2.0;
    let delta = (lambda_max - lambda_min) / 2.0;
    let sigma = theta / delta;
    let rho = 1.0 / sigma;
    let d: Vec<f64> = r.iter().map(|ri| ri / theta).collect();

    // vertex attrs (r, d, x); globals (delta, sigma, rho, rho_prior)
    let mut g = matrix_to_graph(a, true)?
        .with_vertex_attrs(columns(&[&r, &d, x0]))?
        .with_global_attrs(vec![delta, sigma, rho, rho]);
    let update_x = GnLayer::new().vertex_update(3, |v| {
        vec![v.vertex[0], v.vertex[1], v.vertex[2] + v.vertex[1]]
    });
    let update_r = GnLayer::new()
        .edge_update(2, times_source(1))
        .edge_to_vertex(vec![Reducer::Sum])
        .vertex_update(3, |v| vec![v.vertex[0] - v.aggregated[1], v.vertex[1], v.vertex[2]])
        .global_update(4, |g| {
            let (delta, sigma, mut rho) = (g.global[0], g.global[1], g.global[2]);
            let rho_prior = rho;
            rho = 1.0 / (2.0 * sigma - rho);
            vec![delta, sigma, rho, rho_prior]
        });
    let update_d = GnLayer::new().vertex_update(3, |v| {
        let (delta, rho, rho_prior) = (v.global[0], v.global[2], v.global[3]);
        let (r, d) = (v.vertex[0], v.vertex[1]);
        vec![r, rho * rho_prior * d + (2.0 * rho / delta) * r, v.vertex[2]]
    });
    for _ in 0..n {
        g = apply_layer(&g, &update_x)?;
        g = apply_layer(&g, &update_r)?;
        g = apply_layer(&g, &update_d)?;
    }
    Ok(g.vertex_attrs().col(2))
}

/// Result of [`gnn_power_method`].
#[derive(Clone, Debug, PartialEq)]
pub struct PowerResult {
    /// Unit-norm iterate after the last normalization.
    pub vector: Vec<f64>,
    /// Rayleigh quotient of `vector`.
    pub lambda: f64,
}

/// Power iteration for the dominant eigenpair of a symmetric matrix:
/// `iters` rounds of `b <- A b; h1 <- |b|; b <- b / h1`, then the Rayleigh
/// quotient `b^T A b / b^T b`.
pub fn gnn_power_method(a: &CsrMatrix, b0: &[f64], iters: usize) -> Result<PowerResult> {
    check_len(a, "b0", b0)?;
    if b0.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidArgument("power method start vector is zero".into()));
    }
    let multiply = GnLayer::new()
        .edge_update(2, times_source(0))
        .edge_to_vertex(vec![Reducer::Sum])
        .vertex_update(1, |v| vec![v.aggregated[1]]);
    let norm = GnLayer::new()
        .vertex_update(2, |v| vec![v.vertex[0], v.vertex[0] * v.vertex[0]])
        .vertex_to_global(vec![Reducer::Sum])
        .global_update(1, |g| vec![g.vertices[1].sqrt()]);
    let normalize = GnLayer::new().vertex_update(1, |v| vec![v.vertex[0] / v.global[0]]);

    let mut g: AttributedGraph = matrix_to_graph(a, true)?
        .with_vertex_attrs(columns(&[b0]))?
        .with_global_attrs(vec![0.0]);
    for it in 0..iters {
        g = apply_layer(&g, &multiply)?;
        g = apply_layer(&g, &norm)?;
        if g.global_attrs()[0] == 0.0 {
            return Err(Error::Numerical(format!(
                "A b vanished at iteration {it}; the iterate lies in the null space"
            )));
        }
        g = apply_layer(&g, &normalize)?;
        let b = g.vertex_attrs().col(0);
        g = g.with_vertex_attrs(columns(&[&b]))?;
    }

    // Rayleigh quotient: h2 = sum b_i (A b)_i, then lambda = h2 / sum b_i^2
    let h2_layer = GnLayer::new()
        .edge_update(2, times_source(0))
        .edge_to_vertex(vec![Reducer::Sum])
        .vertex_update(2, |v| vec![v.vertex[0], v.vertex[0] * v.aggregated[1]])
        .vertex_to_global(vec![Reducer::Sum])
        .global_update(1, |g| vec![g.vertices[1]]);
    let rq_layer = GnLayer::new()
        .vertex_update(2, |v| vec![v.vertex[0], v.vertex[0] * v.vertex[0]])
        .vertex_to_global(vec![Reducer::Sum])
        .global_update(1, |g| vec![g.global[0] / g.vertices[1]]);
    let g = apply_layer(&g, &h2_layer)?;
    let g = apply_layer(&g, &rq_layer)?;
    Ok(PowerResult {
        vector: g.vertex_attrs().col(0),
        lambda: g.global_attrs()[0],
    })
}

/// Direct (non-graph) transcriptions used as oracles and by callers that
/// only need the numbers.
pub mod reference {
    use crate::sparse::{dot, CsrMatrix};

    pub fn spmv(a: &CsrMatrix, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; a.nrows()];
        a.spmv_into(x, &mut y);
        y
    }

    pub fn weighted_norm(w: &CsrMatrix, x: &[f64]) -> f64 {
        let wx = spmv(w, x);
        x.iter().zip(&wx).map(|(a, b)| a * b).sum::<f64>().sqrt()
    }

    pub fn jacobi(a: &CsrMatrix, b: &[f64], x0: &[f64], omega: f64, iters: usize) -> Vec<f64> {
        let d = a.diag();
        let mut x = x0.to_vec();
        for _ in 0..iters {
            let ax = spmv(a, &x);
            for i in 0..x.len() {
                x[i] += omega / d[i] * (b[i] - ax[i]);
            }
        }
        x
    }

    pub fn chebyshev(
        a: &CsrMatrix,
        b: &[f64],
        x0: &[f64],
        lambda_min: f64,
        lambda_max: f64,
        n: usize,
    ) -> Vec<f64> {
        let mut x = x0.to_vec();
        let ax = spmv(a, &x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, yi)| bi - yi).collect();
        let theta = (lambda_max + lambda_min) / 2.0;
        let delta = (lambda_max - lambda_min) / 2.0;
        let sigma = theta / delta;
        let mut rho = 1.0 / sigma;
        let mut d: Vec<f64> = r.iter().map(|ri| ri / theta).collect();
        for _ in 0..n {
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += di;
            }
            let ad = spmv(a, &d);
            for (ri, adi) in r.iter_mut().zip(&ad) {
                *ri -= adi;
            }
            let rho_prior = rho;
            rho = 1.0 / (2.0 * sigma - rho);
            for (di, ri) in d.iter_mut().zip(&r) {
                *di = rho * rho_prior * *di + (2.0 * rho / delta) * ri;
            }
        }
        x
    }

    pub fn power_method(a: &CsrMatrix, b0: &[f64], iters: usize) -> (Vec<f64>, f64) {
        let mut b = b0.to_vec();
        for _ in 0..iters {
            b = spmv(a, &b);
            let h1 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            b.iter_mut().for_each(|x| *x /= h1);
        }
        let ab = spmv(a, &b);
        let lambda = dot(&b, &ab) / dot(&b, &b);
        (b, lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::sparse::norm2;

    fn laplace_1d(n: usize) -> CsrMatrix {
        CsrMatrix::tridiagonal(n, -1.0, 2.0, -1.0)
    }

    fn random_sparse(n: usize, density: f64, s: &mut Stream) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j || s.uniform() < density {
                    t.push((i, j, s.normal()));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, &t).unwrap()
    }

    fn random_spd(n: usize, s: &mut Stream) -> CsrMatrix {
        let mut t = Vec::new();
        let mut rowsum = vec![0.0; n];
        for i in 0..n {
            for j in i + 1..n {
                if s.uniform() < 0.3 {
                    let v = -s.uniform();
                    t.push((i, j, v));
                    t.push((j, i, v));
                    rowsum[i] += v.abs();
                    rowsum[j] += v.abs();
                }
            }
        }
        for (i, r) in rowsum.iter().enumerate() {
            t.push((i, i, r + 0.5 + s.uniform()));
        }
        CsrMatrix::from_triplets_summed(n, n, &t).unwrap()
    }

    fn rel_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn spmv_identity_and_laplacian() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(gnn_spmv(&CsrMatrix::identity(3), &x, true).unwrap(), x);
        assert_eq!(gnn_spmv(&CsrMatrix::identity(3), &x, false).unwrap(), x);
        let y = gnn_spmv(&laplace_1d(6), &[1.0; 6], true).unwrap();
        assert_eq!(y, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn spmv_matches_csr_and_variants_agree() {
        let mut s = Stream::new(11, 0);
        let a = random_sparse(20, 0.3, &mut s);
        let x: Vec<f64> = (0..20).map(|_| s.normal()).collect();
        let with = gnn_spmv(&a, &x, true).unwrap();
        let without = gnn_spmv(&a, &x, false).unwrap();
        rel_close(&with, &reference::spmv(&a, &x), 1e-13);
        rel_close(&without, &with, 1e-13);
    }

    #[test]
    fn spmv_dimension_error() {
        assert!(matches!(
            gnn_spmv(&CsrMatrix::identity(3), &[1.0], true),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn weighted_norm_cases() {
        let i2 = CsrMatrix::identity(2);
        assert_eq!(gnn_weighted_norm(&i2, &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(gnn_weighted_norm(&i2, &[0.0, 0.0]).unwrap(), 0.0);
        let mut s = Stream::new(3, 0);
        let w = random_spd(6, &mut s);
        let x: Vec<f64> = (0..6).map(|_| s.normal()).collect();
        let dense = w.to_dense();
        let mut q = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                q += x[i] * dense[i][j] * x[j];
            }
        }
        let n = gnn_weighted_norm(&w, &x).unwrap();
        assert!((n - q.sqrt()).abs() <= 1e-12 * q.sqrt());
        let neg = CsrMatrix::identity(2).scaled(-1.0);
        assert!(matches!(
            gnn_weighted_norm(&neg, &[1.0, 0.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn jacobi_identity_and_single_sweep() {
        let b = [1.0, -2.0, 3.0];
        let x = gnn_jacobi(&CsrMatrix::identity(3), &b, &[7.0, 8.0, 9.0], 1.0, 1).unwrap();
        assert_eq!(x, b);
        let mut s = Stream::new(5, 0);
        let a = random_spd(15, &mut s);
        let b: Vec<f64> = (0..15).map(|_| s.normal()).collect();
        let x0: Vec<f64> = (0..15).map(|_| s.normal()).collect();
        let got = gnn_jacobi(&a, &b, &x0, 0.7, 1).unwrap();
        rel_close(&got, &reference::jacobi(&a, &b, &x0, 0.7, 1), 1e-13);
    }

    #[test]
    fn jacobi_zero_diagonal_names_row() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        match gnn_jacobi(&a, &[1.0, 1.0], &[0.0, 0.0], 1.0, 1) {
            Err(Error::ZeroDiagonal { row }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jacobi_fixed_point() {
        let a = CsrMatrix::identity(4).scaled(2.0);
        let x = [1.0, 2.0, 3.0, 4.0];
        let b: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert_eq!(gnn_jacobi(&a, &b, &x, 0.6, 3).unwrap(), x);
    }

    #[test]
    fn jacobi_damps_high_frequency_mode() {
        // tridiag(-1,2,-1) has eigenvectors sin(k pi i/(n+1)); the weighted
        // Jacobi error propagator scales mode k by 1 - 2 omega sin^2(k pi/(2(n+1))).
        let n = 31;
        let a = laplace_1d(n);
        let k = 28;
        let h = std::f64::consts::PI * k as f64 / (n + 1) as f64;
        let e0: Vec<f64> = (1..=n).map(|i| (h * i as f64).sin()).collect();
        let omega = 2.0 / 3.0;
        let factor = 1.0 - 2.0 * omega * (h / 2.0).sin().powi(2);
        let mut e = e0.clone();
        for sweep in 1..=5 {
            let next = gnn_jacobi(&a, &vec![0.0; n], &e, omega, 1).unwrap();
            assert!(norm2(&next) < norm2(&e));
            let expect = factor.abs().powi(sweep) * norm2(&e0);
            assert!((norm2(&next) - expect).abs() < 1e-12);
            e = next;
        }
    }

    #[test]
    fn chebyshev_bit_identical_to_scalar_reference() {
        let mut s = Stream::new(9, 0);
        for n in [5, 17, 40] {
            let a = random_spd(n, &mut s);
            let b: Vec<f64> = (0..n).map(|_| s.normal()).collect();
            let x0: Vec<f64> = (0..n).map(|_| s.normal()).collect();
            let got = gnn_chebyshev(&a, &b, &x0, 0.3, 6.0, 12).unwrap();
            assert_eq!(got, reference::chebyshev(&a, &b, &x0, 0.3, 6.0, 12));
        }
    }

    #[test]
    fn chebyshev_zero_iterations_and_bad_bounds() {
        let a = laplace_1d(4);
        let x0 = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(gnn_chebyshev(&a, &[0.0; 4], &x0, 0.1, 4.0, 0).unwrap(), x0);
        assert!(gnn_chebyshev(&a, &[0.0; 4], &x0, 0.0, 0.0, 1).is_err());
        assert!(gnn_chebyshev(&a, &[0.0; 4], &x0, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn chebyshev_beats_jacobi_on_laplacian() {
        let n = 32;
        let a = laplace_1d(n);
        let pi = std::f64::consts::PI;
        let lmin = 2.0 - 2.0 * (pi / (n + 1) as f64).cos();
        let lmax = 2.0 - 2.0 * (n as f64 * pi / (n + 1) as f64).cos();
        let b = vec![1.0; n];
        let x0 = vec![0.0; n];
        let resid = |x: &[f64]| {
            let ax = reference::spmv(&a, x);
            norm2(&b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<_>>())
        };
        let xc = gnn_chebyshev(&a, &b, &x0, lmin, lmax, 30).unwrap();
        let xj = gnn_jacobi(&a, &b, &x0, 2.0 / 3.0, 30).unwrap();
        assert!(resid(&xc) < resid(&xj));
    }

    #[test]
    fn power_method_cases() {
        let a = CsrMatrix::from_dense(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 5.0],
        ])
        .unwrap();
        let r = gnn_power_method(&a, &[1.0, 1.0, 1.0], 50).unwrap();
        assert!((r.lambda - 5.0).abs() < 1e-8);
        assert!((norm2(&r.vector) - 1.0).abs() < 1e-14);
        let r = gnn_power_method(&CsrMatrix::identity(4), &[1.0, 2.0, 0.0, 1.0], 1).unwrap();
        assert!((r.lambda - 1.0).abs() < 1e-15);
    }

    #[test]
    fn power_method_matches_dense_eigensolve() {
        let mut s = Stream::new(21, 0);
        let a = random_spd(8, &mut s);
        let m = nalgebra::DMatrix::from_fn(8, 8, |i, j| a.get(i, j).unwrap_or(0.0));
        let top = m.symmetric_eigenvalues().max();
        let b0: Vec<f64> = (0..8).map(|_| s.uniform() + 0.1).collect();
        let r = gnn_power_method(&a, &b0, 2000).unwrap();
        assert!((r.lambda - top).abs() < 1e-6 * top, "{} vs {top}", r.lambda);
        let (_, lref) = reference::power_method(&a, &b0, 2000);
        assert!((r.lambda - lref).abs() <= 1e-10 * lref);
    }

    #[test]
    fn power_method_null_space_error() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            gnn_power_method(&a, &[0.0, 1.0], 3),
            Err(Error::Numerical(_))
        ));
    }
}
