//! Fixtures shared by the benchmarks.

use gnn_linalg::fem::{assemble_laplace_dirichlet, JacobiDataConfig, ProblemInstance, QuadMesh, Thetas};
use gnn_linalg::{CsrMatrix, Stream};

/// Bilinear Poisson matrix on an `n x n` grid with Dirichlet boundary.
pub fn poisson(n: usize) -> CsrMatrix {
    assemble_laplace_dirichlet(&QuadMesh::uniform(n).expect("mesh")).expect("assembly").matrix
}

pub fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut s = Stream::new(seed, 0);
    (0..n).map(|_| s.uniform_in(-1.0, 1.0)).collect()
}

/// First instance of the desk-scale Jacobi dataset.
pub fn jacobi_instance() -> ProblemInstance {
    gnn_linalg::fem::jacobi_instance(&JacobiDataConfig::desk(0), 0).expect("instance")
}

/// Periodic diffusion instance on an `n x n` grid.
pub fn diffusion_instance(n: usize) -> ProblemInstance {
    let thetas = Thetas {
        alpha_x: 1,
        alpha_y: 2,
        beta_x: 3,
        beta_y: 1,
    };
    ProblemInstance::diffusion(0, 0, n, thetas).expect("instance")
}
