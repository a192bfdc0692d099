//! Dense linear algebra: matrix type, Jacobi SVD and eigensolver, Cholesky, nuclear norm.

pub mod eig;
pub mod matrix;
pub mod nuclear;
pub mod solve;
pub mod svd;

pub use eig::symmetric_eig;
pub use matrix::{dot, norm, Matrix};
pub use nuclear::{nuclear_norm, nuclear_norm_subgradient, rank_threshold, two_column_singular_values};
pub use solve::{cholesky, cholesky_solve};
pub use svd::{singular_values, svd, SvdResult};
