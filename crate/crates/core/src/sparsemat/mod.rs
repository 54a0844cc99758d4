//! Compressed-row sparse matrices and the vector kernels shared by every
//! solver variant.
//!
//! All reductions run in a fixed sequential order so that two replicas fed
//! the same inputs produce bit-identical results.

mod csr;
mod generate;
mod kernels;
mod market;

pub use csr::CsrMatrix;
pub use generate::{gen_poisson2d, gen_poisson3d};
pub use kernels::{axpy, copy, dot, norm2, spmv, spmv_into, sub, xpby};
pub use market::{load_matrix_market, read_matrix_market, write_matrix_market};

/// Dense binary64 vector (`b`, `x`, `r`, `p`, `q`, `z`).
pub type DenseVector = Vec<f64>;
