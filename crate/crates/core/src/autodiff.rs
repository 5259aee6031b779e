//! Reverse-mode automatic differentiation on a tape of dense tensors.
//!
//! Every value is a row-major `rows x cols` [`Tensor`]; scalars are `1 x 1`
//! and vectors are columns. Operations append a node holding the primal
//! value, so node inputs always precede the node itself and the backward
//! pass is a single reverse sweep.
//!
//! Non-smooth points follow fixed rules: `max`/`min` (whole-tensor and
//! segmented) send the gradient to the lowest attaining index, `relu` has
//! zero slope at 0, `leaky_relu` uses the negative slope for `x <= 0`, and
//! `sqrt`/`pow` with exponent below one have zero gradient at 0.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape(format!("{} values for a {rows}x{cols} tensor", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn column(v: Vec<f64>) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v,
        }
    }

    pub fn row(v: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// The single entry of a `1 x 1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(shape(format!("item() on a {}x{} tensor", self.rows, self.cols)))
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn shape(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

/// Dense products through `matrixmultiply`, row-major with optional
/// transposes: `c = op(a) * op(b) + beta * c` where `op(a)` is `m x k` and
/// `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction used by [`Tape::segment_reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentOp {
    Sum,
    Mean,
    Min,
    Max,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MatMul(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Recip(Var),
    Pow(Var, f64),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    Extremum(Var, usize),
    L2Norm(Var),
    ColNorms(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<Vec<usize>>),
    View(Var, usize),
    ScatterAddRows(Var, Arc<Vec<usize>>),
    Segment {
        x: Var,
        offsets: Arc<Vec<usize>>,
        op: SegmentOp,
        arg: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const NO_ARG: usize = usize::MAX;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn node(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs = self.needs(inputs);
        self.push(value, op, needs)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        Tensor {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip(a, b, |p, q| p + q);
        Ok(self.node(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip(a, b, |p, q| p - q);
        Ok(self.node(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip(a, b, |p, q| p * q);
        Ok(self.node(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.node(v, Op::Scale(a, c), &[a])
    }

    /// `a + 1 b` where `b` is a `1 x cols` row added to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(b));
        if r.rows != 1 || r.cols != x.cols {
            return Err(shape(format!(
                "add_row: row {:?} does not match {:?}",
                r.shape(),
                x.shape()
            )));
        }
        let mut v = x.clone();
        for row in v.data.chunks_mut(x.cols.max(1)) {
            for (p, q) in row.iter_mut().zip(&r.data) {
                *p += q;
            }
        }
        Ok(self.node(v, Op::AddRow(a, b), &[a, b]))
    }

    /// Scales row `i` of `a` by `d[i]`, with `d` a column of length `rows`.
    pub fn mul_col(&mut self, a: Var, d: Var) -> Result<Var> {
        let (x, c) = (self.value(a), self.value(d));
        if c.cols != 1 || c.rows != x.rows {
            return Err(shape(format!(
                "mul_col: column {:?} does not match {:?}",
                c.shape(),
                x.shape()
            )));
        }
        let mut v = x.clone();
        if x.cols > 0 {
            for (row, s) in v.data.chunks_mut(x.cols).zip(&c.data) {
                row.iter_mut().for_each(|p| *p *= s);
            }
        }
        Ok(self.node(v, Op::MulCol(a, d), &[a, d]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols != y.rows {
            return Err(shape(format!("matmul: {:?} x {:?}", x.shape(), y.shape())));
        }
        let mut v = Tensor::zeros(x.rows, y.cols);
        gemm(x.rows, x.cols, y.cols, &x.data, false, &y.data, false, 0.0, &mut v.data);
        Ok(self.node(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `A x` for a constant sparse `A` and dense `x` (one or more columns).
    pub fn spmm(&mut self, a: Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if a.ncols() != xv.rows {
            return Err(shape(format!(
                "spmm: {}x{} matrix times {:?}",
                a.nrows(),
                a.ncols(),
                xv.shape()
            )));
        }
        let c = xv.cols;
        let mut v = Tensor::zeros(a.nrows(), c);
        for i in 0..a.nrows() {
            let (cols, vals) = a.row(i);
            let out = &mut v.data[i * c..(i + 1) * c];
            for (&j, &aij) in cols.iter().zip(vals) {
                for (o, xj) in out.iter_mut().zip(&xv.data[j * c..(j + 1) * c]) {
                    *o += aij * xj;
                }
            }
        }
        Ok(self.node(v, Op::SpMM(a, x), &[x]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.node(v, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.node(v, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / x);
        self.node(v, Op::Recip(a), &[a])
    }

    /// Elementwise power. Negative bases need an integer exponent.
    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var> {
        let x = self.value(a);
        if p.fract() != 0.0 {
            if let Some(i) = x.data.iter().position(|&t| t < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "pow: entry {i} = {} is negative and exponent {p} is not an integer",
                    x.data[i]
                )));
            }
        }
        let v = x.map(|t| t.powf(p));
        Ok(self.node(v, Op::Pow(a, p), &[a]))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(i) = x.data.iter().position(|&t| t < 0.0) {
            return Err(Error::InvalidArgument(format!("sqrt of negative entry {i}")));
        }
        let v = x.map(f64::sqrt);
        Ok(self.node(v, Op::Sqrt(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        self.node(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(shape("mean of an empty tensor"));
        }
        let v = Tensor::scalar(x.data.iter().sum::<f64>() / x.len() as f64);
        Ok(self.node(v, Op::Mean(a), &[a]))
    }

    fn extremum(&mut self, a: Var, want_max: bool) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(shape("max/min of an empty tensor"));
        }
        let mut arg = 0;
        for (i, &t) in x.data.iter().enumerate() {
            if (want_max && t > x.data[arg]) || (!want_max && t < x.data[arg]) {
                arg = i;
            }
        }
        let v = Tensor::scalar(x.data[arg]);
        Ok(self.node(v, Op::Extremum(a, arg), &[a]))
    }

    pub fn max(&mut self, a: Var) -> Result<Var> {
        self.extremum(a, true)
    }

    pub fn min(&mut self, a: Var) -> Result<Var> {
        self.extremum(a, false)
    }

    /// Euclidean norm of all entries.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data.iter().map(|x| x * x).sum::<f64>().sqrt());
        self.node(v, Op::L2Norm(a), &[a])
    }

    /// Euclidean norm of each column, as a `1 x cols` row.
    pub fn col_norms(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut sq = vec![0.0; x.cols];
        for row in x.data.chunks(x.cols.max(1)) {
            for (s, t) in sq.iter_mut().zip(row) {
                *s += t * t;
            }
        }
        let v = Tensor::row(sq.into_iter().map(f64::sqrt).collect());
        self.node(v, Op::ColNorms(a), &[a])
    }

    /// Side-by-side concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows);
        if parts.iter().any(|&p| self.value(p).rows != rows) {
            return Err(shape("concat_cols: row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let v = Tensor { rows, cols, data };
        Ok(self.node(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Row `k` of the result is row `idx[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows) {
            return Err(shape(format!("gather_rows: index {bad} >= {}", x.rows)));
        }
        let mut data = Vec::with_capacity(idx.len() * x.cols);
        for &i in idx.iter() {
            data.extend_from_slice(x.row_slice(i));
        }
        let v = Tensor {
            rows: idx.len(),
            cols: x.cols,
            data,
        };
        Ok(self.node(v, Op::GatherRows(a, idx), &[a]))
    }

    /// Adds row `k` of `a` into row `idx[k]` of a zero `rows x cols` result.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<Vec<usize>>, rows: usize) -> Result<Var> {
        let x = self.value(a);
        if idx.len() != x.rows {
            return Err(shape("scatter_add_rows: one index per input row"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape(format!("scatter_add_rows: index {bad} >= {rows}")));
        }
        let mut v = Tensor::zeros(rows, x.cols);
        for (k, &i) in idx.iter().enumerate() {
            for (o, t) in v.data[i * x.cols..(i + 1) * x.cols].iter_mut().zip(x.row_slice(k)) {
                *o += t;
            }
        }
        Ok(self.node(v, Op::ScatterAddRows(a, idx), &[a]))
    }

    /// The contiguous run `data[offset..offset + rows * cols]` of `a`,
    /// reshaped to `rows x cols`.
    pub fn view(&mut self, a: Var, offset: usize, rows: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        if offset + rows * cols > x.len() {
            return Err(shape(format!(
                "view: {rows}x{cols} at offset {offset} exceeds {} entries",
                x.len()
            )));
        }
        let v = Tensor::new(rows, cols, x.data[offset..offset + rows * cols].to_vec())?;
        Ok(self.node(v, Op::View(a, offset), &[a]))
    }

    /// Column-wise reduction of consecutive row ranges
    /// `offsets[s]..offsets[s + 1]`; empty ranges give zero rows.
    pub fn segment_reduce(&mut self, a: Var, offsets: Arc<Vec<usize>>, op: SegmentOp) -> Result<Var> {
        let x = self.value(a);
        if offsets.is_empty()
            || offsets[0] != 0
            || *offsets.last().expect("nonempty") != x.rows
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(shape("segment_reduce: offsets must run from 0 to rows"));
        }
        let segs = offsets.len() - 1;
        let c = x.cols;
        let mut v = Tensor::zeros(segs, c);
        let mut arg = Vec::new();
        if matches!(op, SegmentOp::Min | SegmentOp::Max) {
            arg = vec![NO_ARG; segs * c];
        }
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo == hi {
                continue;
            }
            let out = &mut v.data[s * c..(s + 1) * c];
            match op {
                SegmentOp::Sum | SegmentOp::Mean => {
                    for r in lo..hi {
                        for (o, t) in out.iter_mut().zip(x.row_slice(r)) {
                            *o += t;
                        }
                    }
                    if op == SegmentOp::Mean {
                        let n = (hi - lo) as f64;
                        out.iter_mut().for_each(|o| *o /= n);
                    }
                }
                SegmentOp::Min | SegmentOp::Max => {
                    let want_max = op == SegmentOp::Max;
                    out.copy_from_slice(x.row_slice(lo));
                    let args = &mut arg[s * c..(s + 1) * c];
                    args.iter_mut().for_each(|p| *p = lo);
                    for r in lo + 1..hi {
                        for (j, &t) in x.row_slice(r).iter().enumerate() {
                            if (want_max && t > out[j]) || (!want_max && t < out[j]) {
                                out[j] = t;
                                args[j] = r;
                            }
                        }
                    }
                }
            }
        }
        Ok(self.node(v, Op::Segment { x: a, offsets, op, arg }, &[a]))
    }

    /// Gradients of the scalar `output` with respect to every parameter
    /// leaf recorded before it.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            let (r, c) = self.value(output).shape();
            return Err(shape(format!("backward needs a scalar output, got {r}x{c}")));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));
        for k in (0..=output.0).rev() {
            let node = &self.nodes[k];
            if !node.needs_grad {
                grads[k] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[k].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
        }
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let ga = zip_t(g, y, |p, q| p * q);
                let gb = zip_t(g, x, |p, q| p * q);
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::Scale(a, c) => self.acc(grads, *a, g.map(|x| c * x)),
            Op::AddRow(a, b) => {
                self.acc(grads, *a, g.clone());
                let mut gb = vec![0.0; g.cols];
                for row in g.data.chunks(g.cols.max(1)) {
                    for (s, t) in gb.iter_mut().zip(row) {
                        *s += t;
                    }
                }
                self.acc(grads, *b, Tensor::row(gb));
            }
            Op::MulCol(a, d) => {
                let (x, dv) = (self.value(*a), self.value(*d));
                let c = x.cols;
                let mut ga = g.clone();
                let mut gd = vec![0.0; x.rows];
                for i in 0..x.rows {
                    let s = dv.data[i];
                    let mut acc = 0.0;
                    for j in 0..c {
                        acc += g.data[i * c + j] * x.data[i * c + j];
                        ga.data[i * c + j] *= s;
                    }
                    gd[i] = acc;
                }
                self.acc(grads, *a, ga);
                self.acc(grads, *d, Tensor::column(gd));
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    let mut ga = Tensor::zeros(x.rows, x.cols);
                    gemm(x.rows, y.cols, x.cols, &g.data, false, &y.data, true, 0.0, &mut ga.data);
                    self.acc(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = Tensor::zeros(y.rows, y.cols);
                    gemm(x.cols, x.rows, y.cols, &x.data, true, &g.data, false, 0.0, &mut gb.data);
                    self.acc(grads, *b, gb);
                }
            }
            Op::SpMM(a, x) => {
                let c = g.cols;
                let mut gx = Tensor::zeros(a.ncols(), c);
                for i in 0..a.nrows() {
                    let (cols, vals) = a.row(i);
                    let gi = &g.data[i * c..(i + 1) * c];
                    for (&j, &aij) in cols.iter().zip(vals) {
                        for (o, t) in gx.data[j * c..(j + 1) * c].iter_mut().zip(gi) {
                            *o += aij * t;
                        }
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::Relu(a) => {
                let ga = zip_t(g, self.value(*a), |p, x| if x > 0.0 { p } else { 0.0 });
                self.acc(grads, *a, ga);
            }
            Op::LeakyRelu(a, s) => {
                let ga = zip_t(g, self.value(*a), |p, x| if x > 0.0 { p } else { s * p });
                self.acc(grads, *a, ga);
            }
            Op::Recip(a) => {
                let ga = zip_t(g, out, |p, r| -p * r * r);
                self.acc(grads, *a, ga);
            }
            Op::Pow(a, e) => {
                let ga = zip_t(g, self.value(*a), |p, x| {
                    if x == 0.0 && *e < 1.0 {
                        0.0
                    } else {
                        p * e * x.powf(e - 1.0)
                    }
                });
                self.acc(grads, *a, ga);
            }
            Op::Sqrt(a) => {
                let ga = zip_t(g, out, |p, s| if s == 0.0 { 0.0 } else { p / (2.0 * s) });
                self.acc(grads, *a, ga);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                let s = g.data[0];
                self.acc(grads, *a, Tensor { rows: x.rows, cols: x.cols, data: vec![s; x.len()] });
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let s = g.data[0] / x.len() as f64;
                self.acc(grads, *a, Tensor { rows: x.rows, cols: x.cols, data: vec![s; x.len()] });
            }
            Op::Extremum(a, arg) => {
                let x = self.value(*a);
                let mut ga = Tensor::zeros(x.rows, x.cols);
                ga.data[*arg] = g.data[0];
                self.acc(grads, *a, ga);
            }
            Op::L2Norm(a) => {
                let n = out.data[0];
                let s = g.data[0];
                let ga = self.value(*a).map(|x| if n == 0.0 { 0.0 } else { s * x / n });
                self.acc(grads, *a, ga);
            }
            Op::ColNorms(a) => {
                let x = self.value(*a);
                let mut ga = x.clone();
                for row in ga.data.chunks_mut(x.cols.max(1)) {
                    for (j, t) in row.iter_mut().enumerate() {
                        let n = out.data[j];
                        *t = if n == 0.0 { 0.0 } else { g.data[j] * *t / n };
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    let mut gp = Tensor::zeros(g.rows, w);
                    for i in 0..g.rows {
                        gp.data[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data[i * g.cols + start..i * g.cols + start + w]);
                    }
                    self.acc(grads, p, gp);
                    start += w;
                }
            }
            Op::GatherRows(a, idx) => {
                let x = self.value(*a);
                let c = x.cols;
                let mut ga = Tensor::zeros(x.rows, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, t) in ga.data[i * c..(i + 1) * c].iter_mut().zip(g.row_slice(k)) {
                        *o += t;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::View(a, offset) => {
                if self.nodes[a.0].needs_grad {
                    let x = self.value(*a);
                    let slot = grads[a.0].get_or_insert_with(|| Tensor::zeros(x.rows, x.cols));
                    for (o, t) in slot.data[*offset..*offset + g.len()].iter_mut().zip(&g.data) {
                        *o += t;
                    }
                }
            }
            Op::ScatterAddRows(a, idx) => {
                let c = g.cols;
                let mut data = Vec::with_capacity(idx.len() * c);
                for &i in idx.iter() {
                    data.extend_from_slice(g.row_slice(i));
                }
                self.acc(grads, *a, Tensor { rows: idx.len(), cols: c, data });
            }
            Op::Segment { x, offsets, op, arg } => {
                let xv = self.value(*x);
                let c = xv.cols;
                let mut gx = Tensor::zeros(xv.rows, c);
                for s in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    if lo == hi {
                        continue;
                    }
                    let gs = g.row_slice(s);
                    match op {
                        SegmentOp::Sum | SegmentOp::Mean => {
                            let f = if *op == SegmentOp::Mean { 1.0 / (hi - lo) as f64 } else { 1.0 };
                            for r in lo..hi {
                                for (o, t) in gx.data[r * c..(r + 1) * c].iter_mut().zip(gs) {
                                    *o += f * t;
                                }
                            }
                        }
                        SegmentOp::Min | SegmentOp::Max => {
                            for j in 0..c {
                                let r = arg[s * c + j];
                                gx.data[r * c + j] += gs[j];
                            }
                        }
                    }
                }
                self.acc(grads, *x, gx);
            }
        }
    }
}

fn zip_t(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&p, &q)| f(p, q)).collect(),
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v` with zeros where the output does not depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest per-coordinate relative error.
    pub max_rel_error: f64,
    /// Coordinate attaining it.
    pub worst: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Coordinates checked against a one-sided estimate.
    pub one_sided: usize,
}

/// Finite-difference stencil used by [`grad_check_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x + h) - f(x - h)) / 2h`.
    #[default]
    Central,
    /// `(8 (f(x + h) - f(x - h)) - (f(x + 2h) - f(x - 2h))) / 12h`.
    FivePoint,
    /// Five-point differences with kink detection. When the second-order
    /// one-sided estimates `(-3 f(x) + 4 f(x + h) - f(x + 2h)) / 2h` and its
    /// mirror disagree beyond round-off, the step shrinks tenfold, at most
    /// [`KINK_RETRIES`] times. A kink still inside the smallest stencil is
    /// checked against the one-sided estimate nearer the tape gradient,
    /// since the tape returns the derivative of one side.
    KinkAware,
}

/// Step reductions tried by [`Stencil::KinkAware`].
pub const KINK_RETRIES: usize = 1;

/// Compares the tape gradient of `f` at `params` with central differences
/// of width `step`, over `coords` (all coordinates when `None`).
///
/// The relative error at coordinate `i` is `|a_i - n_i| / max(|a_i|, |n_i|,
/// 1e-6 * max_j |a_j|)`: entries six orders of magnitude below the largest
/// gradient entry are measured against that scale rather than themselves.
pub fn grad_check<F>(f: F, params: &[f64], step: f64, coords: Option<&[usize]>) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_with(f, params, step, coords, Stencil::Central)
}

/// [`grad_check`] with a choice of difference stencil.
pub fn grad_check_with<F>(
    f: F,
    params: &[f64],
    step: f64,
    coords: Option<&[usize]>,
    stencil: Stencil,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |p: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::column(p.to_vec()));
        let out = f(&mut tape, x)?;
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let x = tape.param(Tensor::column(params.to_vec()));
    let out = f(&mut tape, x)?;
    let full = tape.backward(out)?.wrt(&tape, x).into_data();
    let all: Vec<usize> = (0..params.len()).collect();
    let coords = coords.unwrap_or(&all);

    let f0 = match stencil {
        Stencil::KinkAware => eval(params)?,
        _ => 0.0,
    };
    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let mut one_sided = 0;
    let mut p = params.to_vec();
    for &i in coords {
        let orig = p[i];
        let mut at = |h: f64| -> Result<f64> {
            p[i] = orig + h;
            let v = eval(&p);
            p[i] = orig;
            v
        };
        let d = match stencil {
            Stencil::Central => (at(step)? - at(-step)?) / (2.0 * step),
            Stencil::FivePoint => {
                (8.0 * (at(step)? - at(-step)?) - (at(2.0 * step)? - at(-2.0 * step)?)) / (12.0 * step)
            }
            Stencil::KinkAware => {
                let mut h = step;
                let mut retries = 0;
                loop {
                    let (u1, u2, d1, d2) = (at(h)?, at(2.0 * h)?, at(-h)?, at(-2.0 * h)?);
                    let five = (8.0 * (u1 - d1) - (u2 - d2)) / (12.0 * h);
                    let right = (-3.0 * f0 + 4.0 * u1 - u2) / (2.0 * h);
                    let left = (3.0 * f0 - 4.0 * d1 + d2) / (2.0 * h);
                    let size = [f0, u1, u2, d1, d2].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    if (right - left).abs() <= 64.0 * f64::EPSILON * size / h {
                        break five;
                    }
                    if retries == KINK_RETRIES {
                        one_sided += 1;
                        break if (full[i] - left).abs() <= (full[i] - right).abs() { left } else { right };
                    }
                    retries += 1;
                    h /= 10.0;
                }
            }
        };
        analytic.push(full[i]);
        numeric.push(d);
    }
    let scale = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let mut max_rel_error = 0.0;
    let mut worst = coords.first().copied().unwrap_or(0);
    for (k, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(1e-6 * scale);
        let err = if denom == 0.0 { 0.0 } else { (a - n).abs() / denom };
        if err > max_rel_error {
            max_rel_error = err;
            worst = coords[k];
        }
    }
    Ok(GradCheck {
        max_rel_error,
        worst,
        analytic,
        numeric,
        one_sided,
    })
}
