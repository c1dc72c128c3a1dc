//! Regularized voxel-wise encoding models.
//!
//! Fits per-voxel linear models of activity on stimulus features by OLS,
//! ridge (per-voxel GCV), elastic net (per-voxel K-fold CV) and a
//! hierarchical small-area model sampled by Gibbs; smooths coefficient
//! fields spatially; and scores them by normalized RSS and zero-shot
//! decoding inside a nested cross-validation harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod elastic_net;
pub mod error;
pub mod evaluation;
pub mod field;
mod linalg;
pub mod ridge;
pub mod sae;
pub mod simulation;
pub mod smoothing;
pub mod stats;

pub use error::{Error, Result};
pub use field::{CoefficientField, MethodTag, RegularizationMap, VoxelRegularization};
pub use linalg::log_space;
