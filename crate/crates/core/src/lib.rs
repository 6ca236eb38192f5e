//! Core engine for an age- and biting-time-structured mosquito population
//! model: renewal operator spectral analysis, exact-in-x diffusion stepping,
//! and steady-state construction on the 24-hour biting-time circle.

pub mod error;
pub mod heatgrid;
pub mod model;
pub mod simulate;
pub mod spectral;
pub mod steady;

pub use error::{Error, Result};
