//! Clustered EV fleet model with receding-horizon and heuristic charging
//! schedulers, a synthetic scenario generator and a night-long simulation
//! harness.

pub mod config;
pub mod error;
pub mod harness;
pub mod model;
pub mod mpc;
pub mod scenario;
pub mod spuc;

pub use error::Error;
