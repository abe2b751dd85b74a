//! High-frequency limit theory for Brownian semi-stationary processes whose
//! kernels carry several power-law singularities.
//!
//! Modules build on one another: [`weight_model`] describes the kernel `g`,
//! [`limit_quantities`] and [`fbm_limits`] compute the deterministic limits,
//! [`simulation`] produces paths, [`hf_statistics`] turns paths into
//! estimates, and [`experiments`] runs Monte Carlo checks of the limit theorems.

#[cfg(feature = "cli")]
pub mod cli;
pub mod error;
pub mod experiments;
pub mod fbm_limits;
pub mod hf_statistics;
pub mod limit_quantities;
pub mod quadrature;
pub mod simulation;
pub mod weight_model;

pub use error::{BssError, Result};
