//! Modular agent-based computational economic market simulator.
//!
//! A model is assembled from an agent population, an excess-demand
//! aggregation and a price-adjustment rule:
//!
//! * Cross threshold agents with the exponential price rule, the Euler–Maruyama
//!   SDE rules or an optional wealth ledger,
//! * Levy-Levy-Solomon log-utility investors cleared by a fixed-point price,
//! * the Franke-Westerhoff chartist/fundamentalist representative agents with
//!   discrete-choice or transition-probability switching.
//!
//! Runs are described by a [`SimulationConfig`], executed by
//! [`run_simulation`] or repeated by [`run_monte_carlo`], and summarized with
//! the estimators in [`stats`].

// `!(x > 0.0)` is the NaN-rejecting positivity check throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod config;
pub mod engine;
pub mod error;
pub mod exec;
pub mod io;
pub mod mechanisms;
pub mod montecarlo;
pub mod presets;
pub mod rng;
pub mod solve;
pub mod stats;

pub use config::{ModelKind, SimulationConfig};
pub use engine::{run_simulation, run_simulation_with, MarketState, TimeSeriesRecord};
pub use error::{Error, Result};
pub use exec::ExecPolicy;
pub use montecarlo::{run_monte_carlo, MonteCarloReport};
pub use rng::{RngStream, StreamId};
pub use stats::{ReturnSeries, StatsReport};
