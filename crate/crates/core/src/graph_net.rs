//! Attributed directed graphs and the message-passing layer executor.
//!
//! A layer runs in three phases over a fixed topology:
//!
//! 1. every edge is updated from its own attributes, the attributes of its
//!    source and destination vertices, and the global attributes;
//! 2. for every vertex, the *updated* attributes of the edges terminating
//!    there are reduced to a fixed width and the vertex is updated from its
//!    old attributes, that reduction, and the global attributes;
//! 3. the globals are updated from the old globals and reductions over all
//!    updated edges and all updated vertices.
//!
//! Edges are kept sorted by `(dst, src)`, so the incoming edges of a vertex
//! form one contiguous run and every reduction happens in the same order on
//! every call.
//!
//! A square matrix maps onto a graph with one edge per stored entry: `A_ij`
//! becomes the edge from `j` to `i`, so row `i` is exactly the set of edges
//! terminating at vertex `i`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{dim, Error, Result};
use crate::sparse::CsrMatrix;

/// Above this many entities, updates are evaluated on the rayon pool.
const PARALLEL_THRESHOLD: usize = 4096;

/// Row-major `rows × width` attribute block.
#[derive(Clone, Debug, PartialEq)]
pub struct Attrs {
    rows: usize,
    width: usize,
    data: Vec<f64>,
}

impl Attrs {
    pub fn new(rows: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * width {
            return Err(dim(format!(
                "{} values for a {rows}x{width} attribute block",
                data.len()
            )));
        }
        Ok(Self { rows, width, data })
    }

    pub fn zeros(rows: usize, width: usize) -> Self {
        Self {
            rows,
            width,
            data: vec![0.0; rows * width],
        }
    }

    /// One attribute per row.
    pub fn column(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            width: 1,
            data: values,
        }
    }

    /// Builds from per-row vectors; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>], width: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(dim(format!("row {i} has width {}, expected {width}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            width,
            data,
        })
    }

    /// Column-wise concatenation of blocks with equal row counts.
    pub fn hstack(blocks: &[&Attrs]) -> Result<Self> {
        let rows = blocks.first().map_or(0, |b| b.rows);
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(dim("hstack of blocks with different row counts"));
        }
        let width = blocks.iter().map(|b| b.width).sum();
        let mut data = Vec::with_capacity(rows * width);
        for i in 0..rows {
            for b in blocks {
                data.extend_from_slice(b.row(i));
            }
        }
        Ok(Self { rows, width, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }

    /// Copy of attribute `k` for every row.
    pub fn col(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.width + k]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Directed graph with vertex, edge and global attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributedGraph {
    num_vertices: usize,
    edges: Vec<(usize, usize)>,
    in_ptr: Vec<usize>,
    vertex_attrs: Attrs,
    edge_attrs: Attrs,
    global_attrs: Vec<f64>,
}

impl AttributedGraph {
    /// Builds a graph from `(src, dst)` pairs with matching attribute rows.
    /// Edges (and their attribute rows) are reordered into canonical
    /// `(dst, src)` order; ties keep their input order.
    pub fn new(
        num_vertices: usize,
        edges: Vec<(usize, usize)>,
        edge_attrs: Attrs,
        vertex_attrs: Attrs,
        global_attrs: Vec<f64>,
    ) -> Result<Self> {
        if edge_attrs.rows() != edges.len() {
            return Err(dim(format!(
                "{} edge attribute rows for {} edges",
                edge_attrs.rows(),
                edges.len()
            )));
        }
        if vertex_attrs.rows() != num_vertices {
            return Err(dim(format!(
                "{} vertex attribute rows for {num_vertices} vertices",
                vertex_attrs.rows()
            )));
        }
        if let Some(&(s, d)) = edges
            .iter()
            .find(|&&(s, d)| s >= num_vertices || d >= num_vertices)
        {
            return Err(Error::Structure(format!(
                "edge ({s} -> {d}) references a vertex outside 0..{num_vertices}"
            )));
        }
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&k| (edges[k].1, edges[k].0));
        let sorted: Vec<(usize, usize)> = order.iter().map(|&k| edges[k]).collect();
        let mut data = Vec::with_capacity(edge_attrs.data.len());
        for &k in &order {
            data.extend_from_slice(edge_attrs.row(k));
        }
        let edge_attrs = Attrs::new(edges.len(), edge_attrs.width(), data)?;
        let in_ptr = incoming_offsets(num_vertices, &sorted);
        Ok(Self {
            num_vertices,
            edges: sorted,
            in_ptr,
            vertex_attrs,
            edge_attrs,
            global_attrs,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// `(src, dst)` pairs in canonical order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Edge indices terminating at vertex `k`.
    pub fn incoming(&self, k: usize) -> std::ops::Range<usize> {
        self.in_ptr[k]..self.in_ptr[k + 1]
    }

    pub fn incoming_offsets(&self) -> &[usize] {
        &self.in_ptr
    }

    pub fn vertex_attrs(&self) -> &Attrs {
        &self.vertex_attrs
    }

    pub fn edge_attrs(&self) -> &Attrs {
        &self.edge_attrs
    }

    pub fn global_attrs(&self) -> &[f64] {
        &self.global_attrs
    }

    /// Same topology and edge attributes, new vertex attributes.
    pub fn with_vertex_attrs(&self, v: Attrs) -> Result<Self> {
        if v.rows() != self.num_vertices {
            return Err(dim("vertex attribute rows must match the vertex count"));
        }
        Ok(Self {
            vertex_attrs: v,
            ..self.clone()
        })
    }

    pub fn with_edge_attrs(&self, e: Attrs) -> Result<Self> {
        if e.rows() != self.edges.len() {
            return Err(dim("edge attribute rows must match the edge count"));
        }
        Ok(Self {
            edge_attrs: e,
            ..self.clone()
        })
    }

    pub fn with_global_attrs(&self, g: Vec<f64>) -> Self {
        Self {
            global_attrs: g,
            ..self.clone()
        }
    }
}

fn incoming_offsets(n: usize, sorted: &[(usize, usize)]) -> Vec<usize> {
    let mut ptr = vec![0usize; n + 1];
    for &(_, d) in sorted {
        ptr[d + 1] += 1;
    }
    for k in 0..n {
        ptr[k + 1] += ptr[k];
    }
    ptr
}

/// The set handed to a custom reducer.
///
/// For edge-to-vertex reduction `owner` is the receiving vertex and each item
/// is `(source vertex, edge attributes)`. For edge-to-global reduction each
/// item is `(edge index, attributes)`; for vertex-to-global,
/// `(vertex index, attributes)`; `owner` is `None` in both.
pub struct Members<'a> {
    pub owner: Option<usize>,
    pub items: Vec<(usize, &'a [f64])>,
}

pub type CustomReduce = Arc<dyn Fn(&Members<'_>) -> Vec<f64> + Send + Sync>;

/// Variadic aggregation. Built-ins act column-wise and keep the input width;
/// over an empty set every built-in yields zeros.
#[derive(Clone)]
pub enum Reducer {
    Sum,
    Mean,
    Min,
    Max,
    Custom { width: usize, f: CustomReduce },
}

impl std::fmt::Debug for Reducer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reducer::Sum => f.write_str("Sum"),
            Reducer::Mean => f.write_str("Mean"),
            Reducer::Min => f.write_str("Min"),
            Reducer::Max => f.write_str("Max"),
            Reducer::Custom { width, .. } => write!(f, "Custom({width})"),
        }
    }
}

impl Reducer {
    pub fn custom(
        width: usize,
        f: impl Fn(&Members<'_>) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Reducer::Custom {
            width,
            f: Arc::new(f),
        }
    }

    fn out_width(&self, input: usize) -> usize {
        match self {
            Reducer::Custom { width, .. } => *width,
            _ => input,
        }
    }

    fn reduce_into(&self, members: &Members<'_>, input_width: usize, out: &mut Vec<f64>) {
        let items = &members.items;
        match self {
            Reducer::Custom { f, .. } => out.extend(f(members)),
            _ if items.is_empty() => out.extend(std::iter::repeat_n(0.0, input_width)),
            Reducer::Sum | Reducer::Mean => {
                let start = out.len();
                out.extend(std::iter::repeat_n(0.0, input_width));
                for (_, row) in items {
                    for (o, x) in out[start..].iter_mut().zip(row.iter()) {
                        *o += x;
                    }
                }
                if matches!(self, Reducer::Mean) {
                    let n = items.len() as f64;
                    out[start..].iter_mut().for_each(|o| *o /= n);
                }
            }
            Reducer::Min | Reducer::Max => {
                let start = out.len();
                out.extend_from_slice(items[0].1);
                let take_min = matches!(self, Reducer::Min);
                for (_, row) in &items[1..] {
                    for (o, &x) in out[start..].iter_mut().zip(row.iter()) {
                        if (take_min && x < *o) || (!take_min && x > *o) {
                            *o = x;
                        }
                    }
                }
            }
        }
    }
}

fn reduce_all(reducers: &[Reducer], members: &Members<'_>, input_width: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for r in reducers {
        let before = out.len();
        r.reduce_into(members, input_width, &mut out);
        debug_assert_eq!(out.len() - before, r.out_width(input_width));
    }
    out
}

fn reduced_width(reducers: &[Reducer], input: usize) -> usize {
    reducers.iter().map(|r| r.out_width(input)).sum()
}

/// Reduces, for every vertex, the rows of `edge_attrs` belonging to edges
/// that terminate there. A list of reducers concatenates their outputs.
pub fn aggregate_incoming(
    graph: &AttributedGraph,
    edge_attrs: &Attrs,
    reducers: &[Reducer],
) -> Result<Attrs> {
    if edge_attrs.rows() != graph.num_edges() {
        return Err(dim("edge attribute rows must match the edge count"));
    }
    let w_in = edge_attrs.width();
    let w_out = reduced_width(reducers, w_in);
    let mut data = Vec::with_capacity(graph.num_vertices() * w_out);
    for k in 0..graph.num_vertices() {
        let members = Members {
            owner: Some(k),
            items: graph
                .incoming(k)
                .map(|e| (graph.edges[e].0, edge_attrs.row(e)))
                .collect(),
        };
        let r = reduce_all(reducers, &members, w_in);
        if r.len() != w_out {
            return Err(dim(format!(
                "reducer produced {} values at vertex {k}, declared {w_out}",
                r.len()
            )));
        }
        data.extend(r);
    }
    Attrs::new(graph.num_vertices(), w_out, data)
}

pub struct EdgeInput<'a> {
    pub edge: &'a [f64],
    pub src: &'a [f64],
    pub dst: &'a [f64],
    pub global: &'a [f64],
}

pub struct VertexInput<'a> {
    pub vertex: &'a [f64],
    pub aggregated: &'a [f64],
    pub global: &'a [f64],
}

pub struct GlobalInput<'a> {
    pub global: &'a [f64],
    pub edges: &'a [f64],
    pub vertices: &'a [f64],
}

type EdgeFn = Box<dyn Fn(&EdgeInput<'_>) -> Vec<f64> + Send + Sync>;
type VertexFn = Box<dyn Fn(&VertexInput<'_>) -> Vec<f64> + Send + Sync>;
type GlobalFn = Box<dyn Fn(&GlobalInput<'_>) -> Vec<f64> + Send + Sync>;

/// One message-passing layer: three update functions and three reducers.
///
/// An update that is not set passes its attributes through unchanged.
/// Each update declares its output width, checked on every application.
#[derive(Default)]
pub struct GnLayer {
    inputs: (Option<usize>, Option<usize>, Option<usize>),
    phi_e: Option<(usize, EdgeFn)>,
    phi_v: Option<(usize, VertexFn)>,
    phi_g: Option<(usize, GlobalFn)>,
    rho_ev: Vec<Reducer>,
    rho_eg: Vec<Reducer>,
    rho_vg: Vec<Reducer>,
}

impl GnLayer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares the expected input widths `(n_e, n_v, n_g)`.
    pub fn expects(mut self, edge: usize, vertex: usize, global: usize) -> Self {
        self.inputs = (Some(edge), Some(vertex), Some(global));
        self
    }

    pub fn edge_update(
        mut self,
        width: usize,
        f: impl Fn(&EdgeInput<'_>) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.phi_e = Some((width, Box::new(f)));
        self
    }

    pub fn vertex_update(
        mut self,
        width: usize,
        f: impl Fn(&VertexInput<'_>) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.phi_v = Some((width, Box::new(f)));
        self
    }

    pub fn global_update(
        mut self,
        width: usize,
        f: impl Fn(&GlobalInput<'_>) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.phi_g = Some((width, Box::new(f)));
        self
    }

    pub fn edge_to_vertex(mut self, reducers: Vec<Reducer>) -> Self {
        self.rho_ev = reducers;
        self
    }

    pub fn edge_to_global(mut self, reducers: Vec<Reducer>) -> Self {
        self.rho_eg = reducers;
        self
    }

    pub fn vertex_to_global(mut self, reducers: Vec<Reducer>) -> Self {
        self.rho_vg = reducers;
        self
    }
}

fn checked(kind: &str, idx: usize, declared: usize, out: Vec<f64>) -> Result<Vec<f64>> {
    if out.len() != declared {
        return Err(dim(format!(
            "{kind} {idx}: update returned {} values, declared {declared}",
            out.len()
        )));
    }
    if let Some(k) = out.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!(
            "{kind} {idx}: update produced non-finite attribute {k} ({})",
            out[k]
        )));
    }
    Ok(out)
}

fn run_indexed<F>(count: usize, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Send + Sync,
{
    if count >= PARALLEL_THRESHOLD {
        (0..count).into_par_iter().map(f).collect()
    } else {
        (0..count).map(f).collect()
    }
}

/// Applies one layer and returns the updated graph (same topology).
pub fn apply_layer(graph: &AttributedGraph, layer: &GnLayer) -> Result<AttributedGraph> {
    let (ne, nv, ng) = layer.inputs;
    let widths = [
        ("edge", ne, graph.edge_attrs.width()),
        ("vertex", nv, graph.vertex_attrs.width()),
        ("global", ng, graph.global_attrs.len()),
    ];
    for (what, want, got) in widths {
        if let Some(w) = want {
            if w != got {
                return Err(dim(format!("layer expects {what} width {w}, graph has {got}")));
            }
        }
    }
    let g = graph.global_attrs.as_slice();
    let v = &graph.vertex_attrs;

    let edge_attrs = match &layer.phi_e {
        None => graph.edge_attrs.clone(),
        Some((w, f)) => {
            let rows = run_indexed(graph.num_edges(), |e| {
                let (s, d) = graph.edges[e];
                let inp = EdgeInput {
                    edge: graph.edge_attrs.row(e),
                    src: v.row(s),
                    dst: v.row(d),
                    global: g,
                };
                checked("edge", e, *w, f(&inp))
            })?;
            Attrs::new(graph.num_edges(), *w, rows.concat())?
        }
    };

    let vertex_attrs = match &layer.phi_v {
        None => graph.vertex_attrs.clone(),
        Some((w, f)) => {
            let agg = aggregate_incoming(graph, &edge_attrs, &layer.rho_ev)?;
            let rows = run_indexed(graph.num_vertices(), |k| {
                let inp = VertexInput {
                    vertex: v.row(k),
                    aggregated: agg.row(k),
                    global: g,
                };
                checked("vertex", k, *w, f(&inp))
            })?;
            Attrs::new(graph.num_vertices(), *w, rows.concat())?
        }
    };

    let global_attrs = match &layer.phi_g {
        None => graph.global_attrs.clone(),
        Some((w, f)) => {
            let edge_members = Members {
                owner: None,
                items: (0..edge_attrs.rows()).map(|e| (e, edge_attrs.row(e))).collect(),
            };
            let vertex_members = Members {
                owner: None,
                items: (0..vertex_attrs.rows())
                    .map(|k| (k, vertex_attrs.row(k)))
                    .collect(),
            };
            let ebar = reduce_all(&layer.rho_eg, &edge_members, edge_attrs.width());
            let vbar = reduce_all(&layer.rho_vg, &vertex_members, vertex_attrs.width());
            let inp = GlobalInput {
                global: g,
                edges: &ebar,
                vertices: &vbar,
            };
            checked("global", 0, *w, f(&inp))?
        }
    };

    Ok(AttributedGraph {
        num_vertices: graph.num_vertices,
        edges: graph.edges.clone(),
        in_ptr: graph.in_ptr.clone(),
        vertex_attrs,
        edge_attrs,
        global_attrs,
    })
}

/// One edge per stored entry: `A_ij` is the edge `j -> i` with attribute
/// `(A_ij)`. Without self-edges the diagonal moves to a vertex attribute
/// `(A_ii)` (zero where not stored); with self-edges vertices carry no
/// attributes.
pub fn matrix_to_graph(a: &CsrMatrix, self_edges: bool) -> Result<AttributedGraph> {
    if !a.is_square() {
        return Err(dim(format!(
            "graph view needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.n();
    let mut edges = Vec::with_capacity(a.nnz());
    let mut vals = Vec::with_capacity(a.nnz());
    for (i, j, v) in a.triplets() {
        if i == j && !self_edges {
            continue;
        }
        edges.push((j, i));
        vals.push(v);
    }
    let vertex_attrs = if self_edges {
        Attrs::zeros(n, 0)
    } else {
        Attrs::column(a.diag())
    };
    // CSR order is already (dst, src) order
    let in_ptr = incoming_offsets(n, &edges);
    Ok(AttributedGraph {
        num_vertices: n,
        edge_attrs: Attrs::column(vals),
        edges,
        in_ptr,
        vertex_attrs,
        global_attrs: Vec::new(),
    })
}

/// Inverse of [`matrix_to_graph`]: edge `j -> i` becomes entry `(i, j)`
/// holding edge attribute `column`.
pub fn graph_to_matrix(graph: &AttributedGraph, column: usize) -> Result<CsrMatrix> {
    if column >= graph.edge_attrs.width() {
        return Err(dim(format!(
            "edge attribute {column} requested, width is {}",
            graph.edge_attrs.width()
        )));
    }
    let trip: Vec<_> = graph
        .edges
        .iter()
        .enumerate()
        .map(|(e, &(s, d))| (d, s, graph.edge_attrs.row(e)[column]))
        .collect();
    let n = graph.num_vertices;
    CsrMatrix::from_triplets(n, n, &trip)
}
