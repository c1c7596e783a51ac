//! Sparse Hermitian linear algebra: storage, graph pruning, restarted GMRES,
//! factorized sparse approximate inverses and spectral diagnostics.

pub mod fspai;
pub mod gmres;
pub mod graph;
pub mod matrix;
pub mod spectrum;
pub mod vecops;

pub use fspai::{apply_inverse, fspai, kaporin_number, CholeskyFactor, FactorColumn};
pub use gmres::{gmres, GmresParams, GmresReport};
pub use graph::{degree_cdf, jacobi_sparsify, node_sparsify, DegreeCdf};
pub use matrix::{CscMatrix, LinearOperator, SparseHermitianMatrix, DENSE_LIMIT};
pub use spectrum::{chebyshev_bound, eigen_extremes};
