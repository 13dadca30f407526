//! Calibration and simulation engine for a multi-population mortality
//! improvement model with a regime-switching catastrophe-shock component.
//!
//! The pipeline runs in this order:
//!
//! 1. [`data`]: load per-country deaths/exposures and aggregate the common panel.
//! 2. [`baseline`]: fit the two-factor common trend and the country deviation by
//!    constrained Poisson maximum likelihood.
//! 3. [`outliers`]: detrend the common period effects with smoothing splines and
//!    flag shock years with robust (MCD) Mahalanobis distances; refit without them.
//! 4. [`regime`]: fit the memory-augmented regime-switching model to the baseline
//!    residuals with a Hamilton filter and differential evolution.
//! 5. [`dynamics`]: fit drift-plus-white-noise dynamics to the period effects with
//!    geometrically decaying weights.
//! 6. [`projection`]: simulate shock-equipped mortality scenarios.
//! 7. [`scr`]: value annuities and term insurance and compute solvency capital.

pub mod baseline;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod outliers;
pub mod par;
pub mod projection;
pub mod regime;
pub mod rng;
pub mod scr;
pub mod synthetic;

pub use error::{Error, Result};
