//! Dense linear algebra on row-major `f64` matrices.

mod matrix;
mod random;
mod svd;

pub use matrix::{frobenius_norm, matmul, Matrix};
pub use random::{sample_gaussian, RngSeed};
pub use svd::{pinv, Svd};

pub(crate) use random::fill_gaussian;
