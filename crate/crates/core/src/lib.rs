//! Fault-tolerant sparse Conjugate Gradient.
//!
//! The crate provides CSR kernels and Matrix Market I/O ([`sparsemat`]), CG
//! and Jacobi-PCG iterations with checkpointing ([`solver`]), a transient
//! bit-flip injector ([`faultinject`]), detection/recovery logic and the four
//! solver variants ([`resilience`]), the replica runtime with its
//! synchronization window ([`twinruntime`]), and the batch experiment harness
//! ([`experiment`]).

// NaN must fail these comparisons
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod faultinject;
pub mod resilience;
pub mod solver;
pub mod sparsemat;
pub mod twinruntime;

pub use error::{Error, Result};
