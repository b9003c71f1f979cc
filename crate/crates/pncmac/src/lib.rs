//! Scenario files, seed sweeps and CSV output for the `pncmac-core`
//! simulator.

pub mod campaign;
pub mod config;
pub mod report;
