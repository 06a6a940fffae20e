//! Afterpulse analysis for gated single-photon avalanche diodes.
//!
//! The crate covers the whole measurement chain:
//!
//! - [`models`]: forward afterpulse models and their inversions.
//! - [`simulator`]: gate-level Monte Carlo of a SPAD behind LT or LT+AR
//!   dead-time electronics, plus oscilloscope-style histogramming.
//! - [`estimators`]: the Bethune, Yuan, coincidence and sweep-histogram
//!   estimators, and conversion of `p_exp` into model parameters.
//! - [`fitting`]: power-law and exponential fits of `p_exp` against dead time.
//! - [`histio`]: histogram files.
//! - [`cli`]: the `spadap` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod estimators;
pub mod fitting;
pub mod histio;
pub mod models;
pub mod simulator;

pub use error::{Error, Result};
