//! Tiling, interconnect routing, offline scheduling and cycle-level
//! simulation of multi-pod weight-stationary systolic-array accelerators.

pub mod arch;
pub mod dse;
pub mod error;
pub mod interconnect;
pub mod power;
pub mod scheduler;
pub mod simulator;
pub mod tiling;
pub mod workload;
pub mod zoo;

pub use error::{Error, Result};
