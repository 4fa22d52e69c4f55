//! Quasi-static time-series simulation of low-voltage radial grids with
//! mini-PV, rooftop PV and battery storage.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod control;
pub mod der;
pub mod engine;
pub mod grid_model;
pub mod metrics;
pub mod power_flow;
pub mod profiles;
pub mod report;
pub mod scenario;
pub mod strategies;
