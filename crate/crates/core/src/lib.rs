//! Simulation and Bayesian analysis of cluster randomized trials whose
//! participants carry point-referenced locations.
//!
//! The crate covers the full pipeline of an operating-characteristic study:
//!
//! - [`geometry`] and [`kernels`]: cluster regions on a grid, participant
//!   locations, stationary correlation functions.
//! - [`gaussian`]: dense Cholesky numerics, multivariate normal densities,
//!   conjugate Gaussian updates.
//! - [`design`]: ICC, variance partitioning, design effect and cluster counts.
//! - [`datagen`]: synthetic trials with cluster, spatial and individual noise.
//! - [`priors`]: penalized-complexity priors on standard deviations and range.
//! - [`inference`]: the spatial mixed model and four non-spatial comparators,
//!   fitted by exact Gaussian marginalization over a hyperparameter grid.
//! - [`harness`]: decision rule, metrics, replicated studies and persistence.

pub mod datagen;
pub mod design;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod harness;
pub mod inference;
pub mod kernels;
pub mod priors;
pub mod special;

pub use error::{Error, Result};
