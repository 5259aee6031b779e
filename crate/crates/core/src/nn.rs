//! Multilayer perceptrons, the two model architectures, Adam and
//! checkpoints.
//!
//! Parameters live in one flat `Vec<f64>` per model. Each dense layer
//! stores its `in x out` weight matrix row-major followed by its bias, so a
//! row input `x` maps to `x W + b`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{gemm, SegmentOp, Tape, Tensor, Var};
use crate::error::{dim, Error, Result};
use crate::graph_net::{aggregate_incoming, apply_layer, matrix_to_graph, AttributedGraph, Attrs, GnLayer, Reducer};
use crate::rng::Stream;
use crate::sparse::CsrMatrix;

/// Negative slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    LeakyRelu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub bias: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn num_params(&self) -> usize {
        (self.inputs + usize::from(self.bias)) * self.outputs
    }
}

/// A stack of dense layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layers: Vec<LayerSpec>,
}

impl MlpSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for (k, w) in layers.windows(2).enumerate() {
            if w[0].outputs != w[1].inputs {
                return Err(dim(format!(
                    "layer {k} outputs {} but layer {} takes {}",
                    w[0].outputs,
                    k + 1,
                    w[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Biased layers through `widths`, `hidden` activation on all but the
    /// last, which uses `last`.
    pub fn chain(widths: &[usize], hidden: Activation, last: Activation) -> Self {
        assert!(widths.len() >= 2, "chain needs at least two widths");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|k| LayerSpec {
                inputs: widths[k],
                outputs: widths[k + 1],
                bias: true,
                activation: if k + 1 == n { last } else { hidden },
            })
            .collect();
        Self { layers }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerSpec::num_params).sum()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("nonempty").outputs
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(dim(format!(
                "{} parameters for an MLP with {}",
                params.len(),
                self.num_params()
            )));
        }
        Ok(())
    }

    /// Forward pass for one input row.
    pub fn forward_row(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if x.len() != self.input_width() {
            return Err(dim(format!("MLP input width {}, expected {}", x.len(), self.input_width())));
        }
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in &self.layers {
            let w = &params[off..off + l.inputs * l.outputs];
            off += l.inputs * l.outputs;
            let mut y = vec![0.0; l.outputs];
            for (i, xi) in cur.iter().enumerate() {
                for (yj, wij) in y.iter_mut().zip(&w[i * l.outputs..(i + 1) * l.outputs]) {
                    *yj += xi * wij;
                }
            }
            if l.bias {
                for (yj, bj) in y.iter_mut().zip(&params[off..off + l.outputs]) {
                    *yj += bj;
                }
                off += l.outputs;
            }
            y.iter_mut().for_each(|v| *v = l.activation.apply(*v));
            cur = y;
        }
        Ok(cur)
    }

    /// Forward pass for a batch of rows (`rows x input_width`). Performs the
    /// same operations as [`MlpSpec::forward_taped`], so the two agree
    /// bit-for-bit.
    pub fn forward_batch(&self, params: &[f64], x: &Tensor) -> Result<Tensor> {
        self.check_params(params)?;
        if x.cols() != self.input_width() {
            return Err(dim(format!("MLP input width {}, expected {}", x.cols(), self.input_width())));
        }
        let mut cur = x.clone();
        let mut off = 0;
        for l in &self.layers {
            let w = &params[off..off + l.inputs * l.outputs];
            off += l.inputs * l.outputs;
            let mut y = Tensor::zeros(cur.rows(), l.outputs);
            gemm(cur.rows(), l.inputs, l.outputs, cur.data(), false, w, false, 0.0, y.data_mut());
            if l.bias {
                let b = &params[off..off + l.outputs];
                off += l.outputs;
                for row in y.data_mut().chunks_mut(l.outputs.max(1)) {
                    for (p, q) in row.iter_mut().zip(b) {
                        *p += q;
                    }
                }
            }
            y.data_mut().iter_mut().for_each(|v| *v = l.activation.apply(*v));
            cur = y;
        }
        Ok(cur)
    }

    /// Per-layer weight and bias views into the flat parameter column
    /// `flat`, starting at `offset`.
    pub fn tape_views(&self, tape: &mut Tape, flat: Var, offset: usize) -> Result<Vec<Var>> {
        let mut vars = Vec::new();
        let mut off = offset;
        for l in &self.layers {
            vars.push(tape.view(flat, off, l.inputs, l.outputs)?);
            off += l.inputs * l.outputs;
            if l.bias {
                vars.push(tape.view(flat, off, 1, l.outputs)?);
                off += l.outputs;
            }
        }
        Ok(vars)
    }

    pub fn forward_taped(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let mut cur = x;
        let mut k = 0;
        for l in &self.layers {
            cur = tape.matmul(cur, params[k])?;
            k += 1;
            if l.bias {
                cur = tape.add_row(cur, params[k])?;
                k += 1;
            }
            cur = match l.activation {
                Activation::None => cur,
                Activation::Relu => tape.relu(cur),
                Activation::LeakyRelu => tape.leaky_relu(cur, LEAKY_SLOPE),
            };
        }
        Ok(cur)
    }
}

/// Glorot-uniform weights `U(-sqrt(6/(in+out)), sqrt(6/(in+out)))`, zero
/// biases, drawn in storage order.
pub fn init_glorot(spec: &MlpSpec, rng: &mut Stream) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.num_params());
    for l in &spec.layers {
        let a = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
        out.extend((0..l.inputs * l.outputs).map(|_| rng.uniform_in(-a, a)));
        if l.bias {
            out.extend(std::iter::repeat_n(0.0, l.outputs));
        }
    }
    out
}

/// Adam with bias correction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(dim("Adam state, parameters and gradients must have equal length"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Which of the two architectures a parameter vector belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Jacobi,
    Diffusion,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedMlp {
    pub name: String,
    pub spec: MlpSpec,
}

impl ModelKind {
    /// The update networks of the architecture, in parameter order.
    pub fn architecture(self) -> Vec<NamedMlp> {
        use Activation::*;
        let named = |name: &str, spec| NamedMlp {
            name: name.to_string(),
            spec,
        };
        match self {
            ModelKind::Jacobi => vec![named("phi_v", MlpSpec::chain(&[5, 50, 20, 1], Relu, None))],
            ModelKind::Diffusion => vec![
                named("encoder_e", MlpSpec::chain(&[3, 16, 16, 32], Relu, None)),
                named("encoder_v", MlpSpec::chain(&[1, 16, 16, 32], Relu, None)),
                named("encoder_g", MlpSpec::chain(&[1, 16, 16, 32], Relu, None)),
                named("phi_e", MlpSpec::chain(&[128, 32, 32], Relu, None)),
                named("phi_v", MlpSpec::chain(&[192, 32, 2], Relu, LeakyRelu)),
            ],
        }
    }

    pub fn num_params(self) -> usize {
        self.architecture().iter().map(|m| m.spec.num_params()).sum()
    }
}

/// Splits a flat parameter vector into per-network slices.
fn split<'a>(arch: &[NamedMlp], params: &'a [f64]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(arch.len());
    let mut off = 0;
    for m in arch {
        let n = m.spec.num_params();
        out.push(&params[off..off + n]);
        off += n;
    }
    out
}

fn glorot_all(arch: &[NamedMlp], seed: u64) -> Vec<f64> {
    let mut rng = Stream::new(seed, crate::rng::streams::INIT);
    arch.iter().flat_map(|m| init_glorot(&m.spec, &mut rng)).collect()
}

fn check_len(kind: ModelKind, params: &[f64]) -> Result<()> {
    if params.len() != kind.num_params() {
        return Err(Error::Checkpoint(format!(
            "{kind:?} model has {} parameters, got {}",
            kind.num_params(),
            params.len()
        )));
    }
    Ok(())
}

/// Per-vertex learned Jacobi diagonal `d_i` (entries of `D_bar^-1`).
///
/// A single layer: off-diagonal incoming edge values are reduced with
/// `[min, mean, sum, max]`, prefixed by `A_ii`, and fed to a 5-50-20-1 MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobiModel {
    pub params: Vec<f64>,
}

impl JacobiModel {
    pub fn spec() -> MlpSpec {
        ModelKind::Jacobi.architecture().remove(0).spec
    }

    pub fn glorot(seed: u64) -> Self {
        Self {
            params: glorot_all(&ModelKind::Jacobi.architecture(), seed),
        }
    }

    pub fn zeros() -> Self {
        Self {
            params: vec![0.0; ModelKind::Jacobi.num_params()],
        }
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        check_len(ModelKind::Jacobi, &params)?;
        Ok(Self { params })
    }

    fn reducers() -> Vec<Reducer> {
        vec![Reducer::Min, Reducer::Mean, Reducer::Sum, Reducer::Max]
    }

    /// `n x 5` inputs `[A_ii, min, mean, sum, max]`.
    pub fn features(a: &CsrMatrix) -> Result<Tensor> {
        let g = matrix_to_graph(a, false)?;
        let agg = aggregate_incoming(&g, g.edge_attrs(), &Self::reducers())?;
        let f = Attrs::hstack(&[g.vertex_attrs(), &agg])?;
        Tensor::new(f.rows(), f.width(), f.as_slice().to_vec())
    }

    /// Evaluates the model as one graph network layer.
    pub fn forward(&self, a: &CsrMatrix) -> Result<Vec<f64>> {
        let spec = Self::spec();
        let params = Arc::new(self.params.clone());
        spec.check_params(&params)?;
        let layer = GnLayer::new()
            .expects(1, 1, 0)
            .edge_to_vertex(Self::reducers())
            .vertex_update(1, move |v| {
                let mut x = Vec::with_capacity(5);
                x.extend_from_slice(v.vertex);
                x.extend_from_slice(v.aggregated);
                spec.forward_row(&params, &x).expect("validated widths")
            });
        let g = apply_layer(&matrix_to_graph(a, false)?, &layer)?;
        Ok(g.vertex_attrs().col(0))
    }

    /// Same model on precomputed features with batched products.
    pub fn forward_features(&self, features: &Tensor) -> Result<Vec<f64>> {
        Ok(Self::spec().forward_batch(&self.params, features)?.into_data())
    }

    /// Records the parameters as one flat leaf and returns `(d, leaf)`,
    /// with `d` the `n x 1` diagonal.
    pub fn forward_taped(&self, tape: &mut Tape, features: &Tensor) -> Result<(Var, Var)> {
        check_len(ModelKind::Jacobi, &self.params)?;
        let flat = tape.param(Tensor::column(self.params.clone()));
        Ok((Self::taped(tape, flat, features)?, flat))
    }

    /// Forward from an already recorded flat parameter column.
    pub fn taped(tape: &mut Tape, flat: Var, features: &Tensor) -> Result<Var> {
        let spec = Self::spec();
        let vars = spec.tape_views(tape, flat, 0)?;
        let x = tape.constant(features.clone());
        spec.forward_taped(tape, &vars, x)
    }
}

/// Graph inputs for the diffusion model: edges `(A_ij, x_rel, y_rel)`
/// without self-edges, vertices `(A_ii)`, global `(h)`.
#[derive(Clone, Debug)]
pub struct DiffusionInput {
    pub graph: AttributedGraph,
    src: Arc<Vec<usize>>,
    dst: Arc<Vec<usize>>,
    zeros_e: Arc<Vec<usize>>,
    zeros_v: Arc<Vec<usize>>,
    offsets: Arc<Vec<usize>>,
}

impl DiffusionInput {
    pub fn new(graph: AttributedGraph) -> Result<Self> {
        if graph.edge_attrs().width() != 3
            || graph.vertex_attrs().width() != 1
            || graph.global_attrs().len() != 1
        {
            return Err(dim(format!(
                "diffusion input needs widths (3, 1, 1), got ({}, {}, {})",
                graph.edge_attrs().width(),
                graph.vertex_attrs().width(),
                graph.global_attrs().len()
            )));
        }
        let src = graph.edges().iter().map(|e| e.0).collect();
        let dst = graph.edges().iter().map(|e| e.1).collect();
        let ne = graph.num_edges();
        let nv = graph.num_vertices();
        let offsets = graph.incoming_offsets().to_vec();
        Ok(Self {
            graph,
            src: Arc::new(src),
            dst: Arc::new(dst),
            zeros_e: Arc::new(vec![0; ne]),
            zeros_v: Arc::new(vec![0; nv]),
            offsets: Arc::new(offsets),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.graph.num_vertices()
    }
}

/// Encoders followed by one message-passing layer predicting `(alpha, beta)`
/// per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionModel {
    pub params: Vec<f64>,
}

struct DiffusionNets {
    enc_e: MlpSpec,
    enc_v: MlpSpec,
    enc_g: MlpSpec,
    phi_e: MlpSpec,
    phi_v: MlpSpec,
}

fn diffusion_nets() -> DiffusionNets {
    let mut a = ModelKind::Diffusion.architecture().into_iter().map(|m| m.spec);
    let mut next = || a.next().expect("five networks");
    DiffusionNets {
        enc_e: next(),
        enc_v: next(),
        enc_g: next(),
        phi_e: next(),
        phi_v: next(),
    }
}

impl DiffusionModel {
    pub fn glorot(seed: u64) -> Self {
        Self {
            params: glorot_all(&ModelKind::Diffusion.architecture(), seed),
        }
    }

    pub fn zeros() -> Self {
        Self {
            params: vec![0.0; ModelKind::Diffusion.num_params()],
        }
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        check_len(ModelKind::Diffusion, &params)?;
        Ok(Self { params })
    }

    /// Evaluates the encoder layer and the message-passing layer through
    /// the graph executor; returns `n x 2` `(alpha, beta)` rows.
    pub fn forward(&self, input: &DiffusionInput) -> Result<Attrs> {
        let nets = diffusion_nets();
        let arch = ModelKind::Diffusion.architecture();
        let parts: Vec<Arc<Vec<f64>>> = split(&arch, &self.params)
            .into_iter()
            .map(|p| Arc::new(p.to_vec()))
            .collect();
        let mlp = |spec: MlpSpec, p: Arc<Vec<f64>>| move |x: &[f64]| spec.forward_row(&p, x).expect("validated widths");

        let (fe, fv, fg) = (
            mlp(nets.enc_e, parts[0].clone()),
            mlp(nets.enc_v, parts[1].clone()),
            mlp(nets.enc_g, parts[2].clone()),
        );
        let encoder = GnLayer::new()
            .expects(3, 1, 1)
            .edge_update(32, move |e| fe(e.edge))
            .vertex_update(32, move |v| fv(v.vertex))
            .global_update(32, move |g| fg(g.global));
        let (pe, pv) = (mlp(nets.phi_e, parts[3].clone()), mlp(nets.phi_v, parts[4].clone()));
        let layer = GnLayer::new()
            .expects(32, 32, 32)
            .edge_update(32, move |e| pe(&[e.edge, e.dst, e.src, e.global].concat()))
            .edge_to_vertex(vec![Reducer::Min, Reducer::Mean, Reducer::Sum, Reducer::Max])
            .vertex_update(2, move |v| pv(&[v.vertex, v.aggregated, v.global].concat()));
        let g = apply_layer(&apply_layer(&input.graph, &encoder)?, &layer)?;
        Ok(g.vertex_attrs().clone())
    }

    /// Records the parameters as one flat leaf and returns the `n x 2`
    /// prediction with that leaf.
    pub fn forward_taped(&self, tape: &mut Tape, input: &DiffusionInput) -> Result<(Var, Var)> {
        check_len(ModelKind::Diffusion, &self.params)?;
        let flat = tape.param(Tensor::column(self.params.clone()));
        Ok((Self::taped(tape, flat, input)?, flat))
    }

    /// Batched forward from an already recorded flat parameter column.
    pub fn taped(tape: &mut Tape, flat: Var, input: &DiffusionInput) -> Result<Var> {
        let nets = diffusion_nets();
        let g = &input.graph;
        let mut offset = 0;
        let mut run = |tape: &mut Tape, spec: &MlpSpec, x: Var| -> Result<Var> {
            let vars = spec.tape_views(tape, flat, offset)?;
            offset += spec.num_params();
            spec.forward_taped(tape, &vars, x)
        };
        let e0 = tape.constant(Tensor::new(g.num_edges(), 3, g.edge_attrs().as_slice().to_vec())?);
        let v0 = tape.constant(Tensor::new(g.num_vertices(), 1, g.vertex_attrs().as_slice().to_vec())?);
        let g0 = tape.constant(Tensor::row(g.global_attrs().to_vec()));
        let e = run(tape, &nets.enc_e, e0)?;
        let v = run(tape, &nets.enc_v, v0)?;
        let gl = run(tape, &nets.enc_g, g0)?;

        let vd = tape.gather_rows(v, input.dst.clone())?;
        let vs = tape.gather_rows(v, input.src.clone())?;
        let ge = tape.gather_rows(gl, input.zeros_e.clone())?;
        let ein = tape.concat_cols(&[e, vd, vs, ge])?;
        let e1 = run(tape, &nets.phi_e, ein)?;

        let mut aggs = Vec::with_capacity(4);
        for op in [SegmentOp::Min, SegmentOp::Mean, SegmentOp::Sum, SegmentOp::Max] {
            aggs.push(tape.segment_reduce(e1, input.offsets.clone(), op)?);
        }
        let gv = tape.gather_rows(gl, input.zeros_v.clone())?;
        let vin = tape.concat_cols(&[v, aggs[0], aggs[1], aggs[2], aggs[3], gv])?;
        run(tape, &nets.phi_v, vin)
    }

    /// Prediction without recording gradients.
    pub fn predict(&self, input: &DiffusionInput) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (out, _) = self.forward_taped(&mut tape, input)?;
        Ok(tape.value(out).clone())
    }
}

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Training provenance stored with a checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Epoch whose parameters are stored.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// `(epoch, train, val)` for every epoch run.
    pub history: Vec<(usize, f64, f64)>,
}

/// Self-describing model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelKind,
    pub architecture: Vec<NamedMlp>,
    pub params: Vec<f64>,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(model: ModelKind, params: Vec<f64>, meta: TrainingMeta) -> Result<Self> {
        check_len(model, &params)?;
        Ok(Self {
            format_version: CHECKPOINT_FORMAT,
            model,
            architecture: model.architecture(),
            params,
            meta,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {CHECKPOINT_FORMAT})",
                self.format_version
            )));
        }
        if self.architecture != self.model.architecture() {
            return Err(Error::Checkpoint(format!(
                "stored architecture does not match the {:?} model",
                self.model
            )));
        }
        check_len(self.model, &self.params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn jacobi(&self) -> Result<JacobiModel> {
        if self.model != ModelKind::Jacobi {
            return Err(Error::Checkpoint(format!("checkpoint holds a {:?} model", self.model)));
        }
        JacobiModel::from_params(self.params.clone())
    }

    pub fn diffusion(&self) -> Result<DiffusionModel> {
        if self.model != ModelKind::Diffusion {
            return Err(Error::Checkpoint(format!("checkpoint holds a {:?} model", self.model)));
        }
        DiffusionModel::from_params(self.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_input(seed: u64) -> DiffusionInput {
        let mut s = Stream::new(seed, 0);
        let n = 5;
        let mut edges = Vec::new();
        let mut ea = Vec::new();
        for i in 0..n {
            for j in [(i + 1) % n, (i + n - 1) % n, (i + 2) % n] {
                edges.push((j, i));
                ea.push(vec![s.normal(), s.int_in(0, 2) as f64 - 1.0, s.int_in(0, 2) as f64 - 1.0]);
            }
        }
        let va: Vec<Vec<f64>> = (0..n).map(|_| vec![s.uniform_in(1.0, 2.0)]).collect();
        let g = AttributedGraph::new(
            n,
            edges,
            Attrs::from_rows(&ea, 3).unwrap(),
            Attrs::from_rows(&va, 1).unwrap(),
            vec![0.2],
        )
        .unwrap();
        DiffusionInput::new(g).unwrap()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(ModelKind::Jacobi.num_params(), 6 * 50 + 51 * 20 + 21);
        assert_eq!(ModelKind::Jacobi.num_params(), 1341);
        assert_eq!(ModelKind::Diffusion.num_params(), 14002);
        let arch = ModelKind::Diffusion.architecture();
        assert_eq!(arch[3].spec.input_width(), 32 * 4);
        assert_eq!(arch[4].spec.input_width(), 32 + 4 * 32 + 32);
    }

    #[test]
    fn mlp_zero_and_identity() {
        let spec = MlpSpec::chain(&[3, 4, 2], Activation::Relu, Activation::None);
        let z = spec.forward_row(&vec![0.0; spec.num_params()], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        let id = MlpSpec::chain(&[3, 3], Activation::None, Activation::None);
        let mut p = vec![0.0; 12];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        assert_eq!(id.forward_row(&p, &[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
        assert!(spec.forward_row(&p, &[1.0]).is_err());
        assert!(MlpSpec::new(vec![spec.layers[0], spec.layers[0]]).is_err());
    }

    #[test]
    fn mlp_matches_hand_arithmetic_and_batch() {
        let spec = MlpSpec::chain(&[2, 3, 1], Activation::Relu, Activation::None);
        let mut s = Stream::new(8, 0);
        let p: Vec<f64> = (0..spec.num_params()).map(|_| s.normal()).collect();
        let x = [0.7, -1.3];
        // layer 1: W1 is 2x3 at p[0..6], b1 at p[6..9]; layer 2: W2 3x1 at p[9..12], b2 at p[12]
        let mut h = [0.0; 3];
        for j in 0..3 {
            h[j] = (x[0] * p[j] + x[1] * p[3 + j] + p[6 + j]).max(0.0);
        }
        let y = h[0] * p[9] + h[1] * p[10] + h[2] * p[11] + p[12];
        let got = spec.forward_row(&p, &x).unwrap()[0];
        assert!((got - y).abs() < 1e-14);
        let batch = spec.forward_batch(&p, &Tensor::row(x.to_vec())).unwrap();
        assert!((batch.data()[0] - y).abs() < 1e-14);
    }

    #[test]
    fn glorot_statistics() {
        let spec = MlpSpec::chain(&[64, 64], Activation::None, Activation::None);
        let p = init_glorot(&spec, &mut Stream::new(1, 0));
        assert_eq!(p, init_glorot(&spec, &mut Stream::new(1, 0)));
        let w = &p[..64 * 64];
        let var = w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64;
        let want = 2.0 / 128.0;
        assert!((var - want).abs() < 0.2 * want, "{var} vs {want}");
        assert!(p[64 * 64..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut adam = Adam::new(3, 1e-3);
        let mut p = vec![1.0, 2.0, 3.0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        let mut adam = Adam::new(3, 1e-3);
        adam.step(&mut p, &[0.5, -2.0, 1e-3]).unwrap();
        for (now, (was, sign)) in p.iter().zip([(1.0, 1.0), (2.0, -1.0), (3.0, 1.0)]) {
            assert!(((was - now) - sign * 1e-3).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_decreases_quadratic() {
        let f = |p: &[f64]| p.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x * x).sum::<f64>();
        let mut p = vec![1.0, -1.0, 0.5];
        let start = f(&p);
        let mut adam = Adam::new(3, 0.01);
        for _ in 0..100 {
            let g: Vec<f64> = p.iter().enumerate().map(|(i, x)| 2.0 * (i + 1) as f64 * x).collect();
            adam.step(&mut p, &g).unwrap();
        }
        assert!(f(&p) < start);
    }

    #[test]
    fn jacobi_model_zero_params_and_paths_agree() {
        let a = CsrMatrix::tridiagonal(6, -1.0, 2.0, -0.5);
        assert_eq!(JacobiModel::zeros().forward(&a).unwrap(), vec![0.0; 6]);
        let m = JacobiModel::glorot(3);
        let plain = m.forward(&a).unwrap();
        let f = JacobiModel::features(&a).unwrap();
        assert_eq!(f.row_slice(0), &[2.0, -0.5, -0.5, -0.5, -0.5]);
        assert_eq!(f.row_slice(2), &[2.0, -1.0, -0.75, -1.5, -0.5]);
        let batch = m.forward_features(&f).unwrap();
        let mut tape = Tape::new();
        let (d, _) = m.forward_taped(&mut tape, &f).unwrap();
        assert_eq!(tape.value(d).data(), batch.as_slice());
        for (p, q) in plain.iter().zip(&batch) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn diffusion_model_paths_agree() {
        let input = small_input(4);
        assert!(DiffusionModel::zeros().predict(&input).unwrap().data().iter().all(|&x| x == 0.0));
        let m = DiffusionModel::glorot(9);
        let plain = m.forward(&input).unwrap();
        let taped = m.predict(&input).unwrap();
        assert_eq!(plain.width(), 2);
        for (p, q) in plain.as_slice().iter().zip(taped.data()) {
            assert!((p - q).abs() < 1e-12, "{p} vs {q}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = DiffusionModel::glorot(5);
        let ck = Checkpoint::new(ModelKind::Diffusion, m.params.clone(), TrainingMeta::default()).unwrap();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let m2 = back.diffusion().unwrap();
        for seed in 0..10 {
            let input = small_input(100 + seed);
            assert_eq!(m.predict(&input).unwrap(), m2.predict(&input).unwrap());
        }
        assert!(back.jacobi().is_err());
    }

    #[test]
    fn checkpoint_rejects_mismatches() {
        let ck = Checkpoint::new(ModelKind::Jacobi, JacobiModel::zeros().params, TrainingMeta::default()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        v["format_version"] = 2.into();
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        v["model"] = "diffusion".into();
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        v["extra"] = 1.into();
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
        assert!(Checkpoint::new(ModelKind::Jacobi, vec![0.0; 3], TrainingMeta::default()).is_err());
    }
}
