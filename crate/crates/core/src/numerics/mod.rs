//! Dense matrices, seeded randomness, Adam and a finite-difference checker.

mod adam;
mod finite_diff;
mod matrix;
mod rng;

pub use adam::AdamState;
pub use finite_diff::{finite_diff_grad, relative_error, DEFAULT_FD_STEP};
pub use matrix::{gaussian_matrix, matmul, Matrix};
pub use rng::Rng;
