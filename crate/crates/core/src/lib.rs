//! Block-diagonal covariance estimation and exact Shapley effects for
//! Gaussian linear models.
//!
//! The crate is organised bottom-up:
//!
//! - [`partition`]: partitions of `[0, p)`, their refinement lattice and
//!   construction from thresholded correlation matrices.
//! - [`covariance`]: sample moments, block projection, the penalized
//!   likelihood criterion and the block-structure estimators.
//! - [`shapley`]: exact Shapley effects, both the full `2^p` formula and the
//!   blockwise formula, plus the plug-in estimator.
//! - [`regression`]: ordinary least squares with intercept.
//! - [`synthdata`]: seeded generators for covariance matrices, coefficients
//!   and samples.
//! - [`crb`]: closed-form Cramér-Rao bound matrices.
//! - [`experiments`]: Monte Carlo harnesses producing plot-ready tables.
//! - [`io`]: CSV and partition-line file formats.
//!
//! Indices are 0-based everywhere in the API. The text formats (partition
//! lines, CSV outputs) use 1-based indices.

// Validations written as `!(a < b)` also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod crb;
mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod partition;
pub mod regression;
pub mod rng;
pub mod shapley;
pub mod synthdata;
mod union_find;

pub use covariance::{
    empirical_moments, estimate_covariance, estimate_structure, frobenius_risk, kappa_default,
    neg_loglik, project_block, psi, BlockCovariance, CovarianceMatrix, Method, SampleMoments, StructureConfig,
    StructureEstimate,
};
pub use error::{Error, Result};
pub use partition::{components_of_threshold, enumerate_partitions, Partition};
pub use regression::{ols_fit, LinearFit};
pub use shapley::{
    conditional_variance, shapley_block, shapley_full, shapley_plugin, GaussianLinearModel,
    ShapleyVector,
};

/// Re-exported so downstream crates do not need a direct nalgebra dependency.
pub use nalgebra::{DMatrix, DVector};
