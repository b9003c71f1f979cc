//! Simulation configuration, the event loop and its outputs.

mod kernel;
pub mod metrics;
pub mod topology;
pub mod trace;

use alloc::vec::Vec;

use thiserror::Error;

use crate::frames::{PacketInfo, TimingParams};
use crate::ids::{Micros, NodeId};
use crate::mac::{Discipline, MacParams};
use crate::phy::PhyParams;
use crate::queueing::SelectOptions;

pub use kernel::{interference_segments, Span};
pub use metrics::Metrics;
pub use topology::{Topology, TopologySpec};
pub use trace::TraceRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("no route between {from} and {to}")]
    Unroutable { from: NodeId, to: NodeId },
    #[error(
        "wheel with {pairs} pairs is infeasible: radius {radius_m:.1} m (max 150 m, non-opposite chords <= 240 m) \
         puts opposite nodes {opposite_m:.1} m apart, not beyond the 250 m range"
    )]
    InfeasibleWheel { pairs: u16, radius_m: f64, opposite_m: f64 },
    #[error("no routable random placement after {0} attempts")]
    PlacementRetriesExhausted(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Pnc,
    Cnc,
    Dot11,
    /// The coding-capable engine with an explicit feature set.
    Coded(SelectOptions),
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Pnc => "pnc",
            Protocol::Cnc => "cnc",
            Protocol::Dot11 => "dot11",
            Protocol::Coded(_) => "coded",
        }
    }

    pub fn discipline(&self) -> Discipline {
        match self {
            Protocol::Pnc => Discipline::Coded(SelectOptions { pnc: true, cnc: true }),
            Protocol::Cnc => Discipline::Coded(SelectOptions { pnc: false, cnc: true }),
            Protocol::Dot11 => Discipline::Fifo,
            Protocol::Coded(o) => Discipline::Coded(*o),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrafficModel {
    /// Every source keeps two unsent packets queued.
    Backlogged,
    Poisson { rate_pps: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub protocol: Protocol,
    pub topology: TopologySpec,
    pub traffic: TrafficModel,
    pub payload_bytes: u16,
    pub duration: Micros,
    /// Deliveries before this instant are not counted.
    pub warmup: Micros,
    pub seed: u64,
    pub phy: PhyParams,
    pub timing: TimingParams,
    pub mac: MacParams,
    /// Keep a per-frame trace.
    pub trace: bool,
    /// Keep packet-level bookkeeping and check run-time invariants.
    pub audit: bool,
}

impl SimConfig {
    pub fn new(protocol: Protocol, topology: TopologySpec) -> SimConfig {
        SimConfig {
            protocol,
            topology,
            traffic: TrafficModel::Backlogged,
            payload_bytes: 1000,
            duration: 50 * crate::ids::MICROS_PER_SEC,
            warmup: 0,
            seed: 1,
            phy: PhyParams::default(),
            timing: TimingParams::default(),
            mac: MacParams::default(),
            trace: false,
            audit: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.timing.validate().map_err(SimError::Config)?;
        if self.payload_bytes == 0 {
            return Err(SimError::Config("payload_bytes must be positive"));
        }
        if self.warmup > self.duration {
            return Err(SimError::Config("warmup exceeds duration"));
        }
        if let TrafficModel::Poisson { rate_pps } = self.traffic {
            if !(rate_pps > 0.0 && rate_pps.is_finite()) {
                return Err(SimError::Config("traffic rate must be positive"));
            }
        }
        let m = &self.mac;
        if m.cw_min == 0 || m.cw_max < m.cw_min || m.retry_limit == 0 || m.queue_capacity == 0 {
            return Err(SimError::Config("mac parameters out of range"));
        }
        if !(self.phy.path_loss_exp > 0.0) || !(self.phy.chip_rate_hz > 0.0) {
            return Err(SimError::Config("phy parameters out of range"));
        }
        Ok(())
    }

    /// Interference-free distance at which a full data frame sees 1% PER.
    pub fn link_range_m(&self) -> f64 {
        let bits = (self.timing.t_data(u64::from(self.payload_bytes)) - self.timing.phy_hdr)
            * self.timing.bit_rate;
        self.phy.range_for_rss(self.phy.rss_for_per(0.01, bits))
    }
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub metrics: Metrics,
    pub trace: Vec<TraceRecord>,
    pub topology: Topology,
    /// Exchanges opened while the opener's NAV was set.
    pub nav_violations: u64,
    /// Actual queue contents of every node when the run stopped.
    pub final_queues: Vec<Vec<PacketInfo>>,
}

pub use kernel::run;
