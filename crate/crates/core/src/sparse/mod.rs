//! Compressed sparse row storage and the reference (loop-based) linear
//! algebra that the graph-network kernels are checked against.

mod io;

pub use io::{read_matrix_market, write_matrix_market};

use crate::error::{dim, Error, Result};

/// Compressed sparse row matrix of `f64`.
///
/// Column indices are strictly increasing within each row. Explicitly stored
/// zeros are kept, so derived matrices (strength of connection, interpolation
/// weights) can share the pattern of the matrix they came from.
///
/// Most of the crate works with square matrices; the interpolation operator
/// is the one rectangular matrix produced.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != nrows + 1 {
            return Err(Error::Structure(format!(
                "row_ptr has length {}, expected {}",
                row_ptr.len(),
                nrows + 1
            )));
        }
        if row_ptr[0] != 0 {
            return Err(Error::Structure("row_ptr[0] must be 0".into()));
        }
        if col_idx.len() != values.len() || row_ptr[nrows] != col_idx.len() {
            return Err(Error::Structure(format!(
                "row_ptr[n] = {}, {} column indices, {} values",
                row_ptr[nrows],
                col_idx.len(),
                values.len()
            )));
        }
        for i in 0..nrows {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(Error::Structure(format!("row_ptr decreases at row {i}")));
            }
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            for (k, &c) in cols.iter().enumerate() {
                if c >= ncols {
                    return Err(Error::Structure(format!(
                        "column {c} out of range in row {i}"
                    )));
                }
                if k > 0 && cols[k - 1] >= c {
                    return Err(Error::Structure(format!(
                        "columns not strictly increasing in row {i}"
                    )));
                }
            }
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates
    /// in the order they were given.
    pub fn from_triplets_summed(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        Self::from_triplets_impl(nrows, ncols, triplets, true)
    }

    /// Builds a matrix from triplets; a repeated `(row, col)` is an error.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        Self::from_triplets_impl(nrows, ncols, triplets, false)
    }

    fn from_triplets_impl(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
        sum_duplicates: bool,
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::Structure(format!(
                    "entry ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        // stable: duplicates are summed in input order
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let (r, c, v) = triplets[k];
            if last == Some((r, c)) {
                if !sum_duplicates {
                    return Err(Error::Structure(format!("duplicate entry ({r}, {c})")));
                }
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self::new(nrows, ncols, row_ptr, col_idx, values)
    }

    /// Dense rows to CSR, dropping exact zeros.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut trip = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(dim(format!("row {i} has {} entries, expected {ncols}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &trip)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// `tridiag(lower, center, upper)` of size `n`.
    pub fn tridiagonal(n: usize, lower: f64, center: f64, upper: f64) -> Self {
        let mut trip = Vec::with_capacity(3 * n);
        for i in 0..n {
            if i > 0 {
                trip.push((i, i - 1, lower));
            }
            trip.push((i, i, center));
            if i + 1 < n {
                trip.push((i, i + 1, upper));
            }
        }
        Self::from_triplets(n, n, &trip).expect("valid tridiagonal pattern")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Dimension of a square matrix (the row count otherwise).
    pub fn n(&self) -> usize {
        self.nrows
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored columns and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Iterates `(row, col, value)` over stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &a)| (i, j, a))
        })
    }

    /// Stored value at `(i, j)`, if present.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|k| vals[k])
    }

    /// Diagonal entries; absent entries read as zero.
    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i).unwrap_or(0.0))
            .collect()
    }

    /// Same pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(dim(format!(
                "{} values for a pattern with {} entries",
                values.len(),
                self.nnz()
            )));
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
            ..self.clone()
        }
    }

    /// `y = A x`, summing each row in stored column order.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(dim(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.ncols
            )));
        }
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// Unchecked `y = A x`; callers guarantee the lengths.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (i, j, v) in self.triplets() {
            let k = next[j];
            col_idx[k] = i;
            values[k] = v;
            next[j] += 1;
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    /// Largest `|A_ij - A_ji|` over the union of both patterns.
    pub fn symmetry_defect(&self) -> f64 {
        let t = self.transpose();
        let mut worst: f64 = 0.0;
        for (i, j, v) in self.triplets() {
            worst = worst.max((v - t.get(i, j).unwrap_or(0.0)).abs());
        }
        for (i, j, v) in t.triplets() {
            worst = worst.max((v - self.get(i, j).unwrap_or(0.0)).abs());
        }
        worst
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        let ax = self.spmv(x)?;
        Ok(ax.iter().zip(x).map(|(a, b)| a * b).sum())
    }

    /// `D A D` for the diagonal scaling `d`.
    pub fn diag_scaled(&self, d: &[f64]) -> Result<Self> {
        if d.len() != self.nrows || !self.is_square() {
            return Err(dim("diagonal scaling needs a square matrix and matching vector"));
        }
        let vals = self.triplets().map(|(i, j, v)| d[i] * v * d[j]).collect();
        self.with_values(vals)
    }

    /// Symmetric permutation `B = Q A Qᵀ` with `B[perm[i], perm[j]] = A[i, j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.nrows || !self.is_square() {
            return Err(dim("permutation length must match a square matrix"));
        }
        let trip: Vec<_> = self
            .triplets()
            .map(|(i, j, v)| (perm[i], perm[j], v))
            .collect();
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Rejects NaN and infinite entries.
pub fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::Numerical(format!("{name}[{i}] = {} is not finite", v[i]))),
        None => Ok(()),
    }
}
