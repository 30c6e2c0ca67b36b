//! Allocation of a day-ahead renewable energy forecast across a fleet of
//! plug-in hybrid buses, maximising the CO₂ avoided by driving electrically.
//!
//! The pipeline is: [`routes`] → [`utility`] (per-bus concave savings curves
//! built from [`models`]) → a solver: [`aimd`], [`baselines::admm_solve`] or
//! the exact [`baselines::central_solve`]. [`forecast`] handles forecast
//! error and [`scenario`] wires it all behind the CLI.

pub mod aimd;
pub mod baselines;
pub mod comms;
pub mod error;
pub mod fleetgen;
pub mod forecast;
pub mod io;
pub mod models;
pub mod routes;
pub mod scenario;
pub mod solver;
pub mod trace;
pub mod utility;

pub use error::{Error, Result};
