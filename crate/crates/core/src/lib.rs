//! Deterministic discrete-event simulator for multi-hop wireless networks
//! running a CSMA/CA MAC that supports physical-layer network coding (PNC),
//! together with conventional XOR network coding (CNC) and plain 802.11 DCF
//! relaying as baselines.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! threads or the command line lives in the companion `pncmac` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod frames;
pub mod ids;
pub mod mac;
pub mod phy;
pub mod queueing;
pub mod sim;

pub use ids::{Micros, NodeId, PacketId};
pub use sim::{run, Metrics, Protocol, SimConfig, SimError, SimOutput, TrafficModel};

