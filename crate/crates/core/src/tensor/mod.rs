//! Dense `f64` linear algebra, activations and seeded randomness.
//!
//! Every summation runs in ascending index order so that results are
//! reproducible bit-for-bit across runs and across the distributed engine.

pub(crate) mod activation;
mod matrix;
mod rng;
mod vector;

pub use activation::{activation_apply, Activation};
pub use matrix::{matmul, DenseMatrix};
pub use rng::{rng_uniform, Rng};
pub use vector::Vector;
