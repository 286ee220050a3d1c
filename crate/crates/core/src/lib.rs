#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod cli;
pub mod cplx2;
pub mod domain;
pub mod error;
pub mod hamiltonian;
pub mod mesh;
pub mod residual;
pub mod solver;

pub use error::{Error, Result};
