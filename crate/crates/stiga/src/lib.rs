//! Space-time least-squares isogeometric solver for the heat equation.
//!
//! The discretization uses tensor-product B-splines in space and time on a
//! (possibly rational) single-patch geometry. The resulting symmetric
//! positive definite system has Kronecker-sum structure, is applied
//! matrix-free through mode-wise tensor contractions, and is solved by
//! conjugate gradients with a fast-diagonalization preconditioner — plain
//! (`P`) or geometry-aware with separable coefficients and diagonal scaling
//! (`PG`).
//!
//! Module map:
//! - [`splines`]: knot vectors, B-spline evaluation, tensor spaces, quadrature
//! - [`geometry`]: (rational) geometry maps, built-in benchmark domains
//! - [`assembly`]: factor matrices, load vector, lifting of boundary/initial data
//! - [`kronecker`]: sparse/dense Kronecker-sum operators and mode products
//! - [`fastdiag`]: generalized eigendecompositions and the FD preconditioner
//! - [`solver`]: preconditioned conjugate gradients and spectral probes
//! - [`errors`]: manufactured solutions and space-time error norms
//! - [`harness`]: benchmark runs, configuration files, CSV/JSON reports

pub mod assembly;
pub mod dense;
pub mod error;
pub mod errors;
pub mod fastdiag;
pub mod flops;
pub mod geometry;
pub mod harness;
pub mod kronecker;
pub mod solver;
pub mod splines;

pub use error::{Error, Result};
