//! Simulation and analysis toolkit for an entangled-path three-satellite
//! interferometer: optical link budget, null-condition geometry recovery,
//! photon-pair phase statistics, coincidence-counting Monte Carlo and
//! strain sensitivity reporting.

// validation deliberately writes `!(v > 0.0)` so NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
mod dd;
mod error;
pub mod geometry;
pub mod link;
pub mod montecarlo;
pub mod optics;
pub mod phase;
pub mod report;
pub mod sensitivity;
pub mod verify;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
