//! Vaccine-distribution planning on SEIR-type epidemic models.
//!
//! * [`epimodel`]: model variants, piecewise coefficients and a fixed-step RK4 integrator.
//! * [`equilibria`]: reproductive number, fixed points and their stability.
//! * [`estimate`]: Differential Evolution fits of piecewise coefficients to case data.
//! * [`allocate`]: gain forecasts, greedy and random dose distribution, campaign comparison.
//! * [`io`]: CSV and TOML formats shared by the command-line tool.

pub mod allocate;
pub mod epimodel;
pub mod equilibria;
pub mod estimate;
pub mod io;
pub mod error;

pub use error::{Error, Result};
