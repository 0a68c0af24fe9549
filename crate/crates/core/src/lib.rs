// `!(x > 0.0)` guards are deliberate throughout: unlike `x <= 0.0`, they
// also reject NaN inputs.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Simulation and analysis of single-photon time-tag streams over a
//! ground–satellite–ground optical link with laser-ranging-grade timing.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`pass_model`]: satellite pass geometry (range, radial velocity,
//!   light-time) and expected photon arrival times for a gated pulse train.
//! - [`detector_response`]: the Gaussian-plus-exponential detector temporal
//!   response — evaluation, FWHM, random sampling, and histogram fitting.
//! - [`link_budget`]: retroreflector radar-equation downlink budget,
//!   atmospheric transmittance, lognormal fading, scintillation index, and
//!   upgrade-scenario projection.
//! - [`timetag_sim`]: synthetic detection streams (Poisson signal smeared by
//!   the detector response, fading, background, TDC quantization).
//! - [`analysis`]: the measurement pipeline — Δ = t_meas − t_ref matching,
//!   histograms, response fit, temporal filtering, per-frame rate/SNR
//!   statistics, ARTS post-selection, lognormal rate fit, μ_sat estimation.
//! - [`config`] / [`report`]: the JSON run configuration and analysis report.
//!
//! Scalar math (geometry, response evaluation, budget formulas) is generic
//! over [`num_traits::Float`]; the event-stream layers work in `f64` seconds
//! and 64-bit integer picoseconds. The type aliases at the crate root are the
//! `f64` instantiations used by the simulator, the analysis pipeline and the
//! CLI.

pub mod analysis;
pub mod config;
pub mod detector_response;
pub mod histogram;
pub mod link_budget;
pub mod lm;
pub mod pass_model;
pub mod report;
pub mod timetag_sim;

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// FWHM of a Gaussian divided by its standard deviation: 2·sqrt(2 ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;

pub type PassModel = pass_model::PassModel<f64>;
pub type DetectorResponse = detector_response::DetectorResponse<f64>;
pub type BudgetParams = link_budget::BudgetParams<f64>;
pub type AtmosphereModel = link_budget::AtmosphereModel<f64>;
pub type FadingModel = link_budget::FadingModel<f64>;
