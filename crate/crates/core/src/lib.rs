//! Maximum manifold capacity representations.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! * [`linalg`]: dense matrices, Jacobi SVD and eigensolver, nuclear norm and its
//!   subgradient.
//! * [`objective`]: the centroid nuclear-norm loss with optional per-manifold
//!   compression term, and its analytic gradient through sphere normalization.
//! * [`trainer`]: synthetic scene data, augmentations, an MLP encoder with
//!   hand-written reverse mode, and Adam.
//! * [`capacity`]: elliptical radius/dimension, the mean-field capacity estimator
//!   built on per-sample anchor-point QPs, and a brute-force dichotomy oracle.
//! * [`geometry`]: principal angles, shared variance, centroid similarity and
//!   gradient coherence.
//! * [`spectral`]: the augmentation-graph form of the loss and its optimal
//!   embeddings.
//! * [`evaluation`]: linear probe, kNN monitor, PGD attacks.
//!
//! The linear algebra and the objective are generic over [`Real`]; everything
//! that trains or samples works in `f64` through the aliases below.

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod linalg;
pub mod objective;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use scalar::Real;

/// Double-precision matrix, the default carrier throughout the crate.
pub type Matrix = linalg::Matrix<f64>;
pub type SvdResult = linalg::SvdResult<f64>;
pub type ManifoldBatch = objective::ManifoldBatch<f64>;
pub type CentroidMatrix = objective::CentroidMatrix<f64>;
pub type LossBreakdown = objective::LossBreakdown<f64>;
