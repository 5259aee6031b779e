//! Sparse linear algebra kernels written as message-passing graph network
//! layers, and two learned models built on the same executor: a per-row
//! Jacobi diagonal and a pointwise diffusion-coefficient regressor.
//!
//! The modules build on each other in this order:
//!
//! - [`sparse`]: CSR storage, reference products, Matrix Market I/O.
//! - [`graph_net`]: attributed graphs and the layer executor.
//! - [`kernels`]: SpMV, weighted norm, Jacobi, Chebyshev and the power
//!   method as layers.
//! - [`amg`]: strength of connection, C/F splitting, direct interpolation
//!   and a two-level solve.
//! - [`autodiff`]: a reverse-mode tape over the operations the losses use.
//! - [`nn`]: MLPs, the two model architectures, Adam and checkpoints.
//! - [`fem`]: meshes, bilinear assembly, the sine basis and datasets.
//! - [`train`]: losses, training loops and evaluation.

pub mod amg;
pub mod autodiff;
pub mod error;
pub mod fem;
pub mod graph_net;
pub mod kernels;
pub mod nn;
pub mod rng;
pub mod sparse;
pub mod train;

pub use error::{Error, Result};
pub use graph_net::{apply_layer, AttributedGraph, Attrs, GnLayer, Reducer};
pub use rng::Stream;
pub use sparse::CsrMatrix;
