//! Asymmetric sparse canonical correlation analysis between SPD-matrix-valued
//! curves and high-dimensional vectors.
//!
//! The crate is organized bottom-up:
//!
//! - [`spd`]: affine-invariant geometry of symmetric positive definite matrices.
//! - [`field`]: curves on the SPD manifold and tangent vector fields along them.
//! - [`rfpca`]: intrinsic Riemannian functional PCA.
//! - [`grouplasso`]: row-sparse multivariate regression, λ paths and cross-validation.
//! - [`cca`]: asymmetric sparse CCA and classical CCA.
//! - [`pipeline`]: the functional CCA estimator, its Euclidean variant and (d, λ) selection.
//! - [`sim`]: ground-truth simulation, evaluation metrics and the trial harness.
//! - [`io`]: CSV datasets and JSON model artifacts.

pub mod cca;
mod error;
pub mod field;
pub mod grouplasso;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod rfpca;
pub mod sim;
pub mod spd;

pub use error::{Error, Result};
