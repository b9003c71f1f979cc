use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::frames::{FrameKind, PacketInfo};
use crate::ids::{Micros, NodeId, PacketId, MICROS_PER_SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropCause {
    QueueFull,
    RetryLimit,
}

/// Delivered traffic of one direction of a flow.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowStats {
    pub origin: NodeId,
    pub destination: NodeId,
    pub generated: u64,
    pub delivered_packets: u64,
    pub delivered_bits: u64,
    pub delay_sum_us: u128,
    pub dropped: u64,
}

impl FlowStats {
    pub fn throughput_bps(&self, duration: Micros) -> f64 {
        if duration == 0 {
            return 0.0;
        }
        self.delivered_bits as f64 * MICROS_PER_SEC as f64 / duration as f64
    }

    pub fn mean_delay_s(&self) -> Option<f64> {
        (self.delivered_packets > 0)
            .then(|| self.delay_sum_us as f64 / self.delivered_packets as f64 / MICROS_PER_SEC as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExchangeCounts {
    pub unicast: u64,
    pub cnc: u64,
    pub cnc_partial: u64,
    pub pnc: u64,
    pub pnc_single: u64,
    pub pnc_failed: u64,
}

/// One PNC exchange observed at its relay.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PncRecord {
    pub relay: NodeId,
    pub start: Micros,
    pub end: Micros,
    pub relay_queue_before: usize,
    /// Sampled as ACK-PNC starts.
    pub relay_queue_after: usize,
    pub packets: Vec<PacketId>,
}

#[derive(Clone, Debug, Default)]
pub struct Metrics {
    pub duration: Micros,
    /// Deliveries before this instant are ignored.
    pub warmup: Micros,
    /// Keyed by (origin, destination).
    pub flows: BTreeMap<(NodeId, NodeId), FlowStats>,
    pub drops: BTreeMap<DropCause, u64>,
    pub exchanges: ExchangeCounts,
    pub frames_sent: BTreeMap<FrameKind, u64>,
    pub pnc_records: Vec<PncRecord>,
    /// Every (node, packet) enqueue, kept only when auditing.
    pub enqueue_log: Vec<(NodeId, PacketId, Micros)>,
    pub audit: bool,
    generated_ids: BTreeSet<PacketId>,
    delivered_ids: BTreeSet<PacketId>,
    dropped_ids: BTreeSet<PacketId>,
}

impl Metrics {
    pub fn new(duration: Micros, audit: bool) -> Self {
        Metrics { duration, audit, ..Metrics::default() }
    }

    pub fn add_flow(&mut self, origin: NodeId, destination: NodeId) {
        self.flows.entry((origin, destination)).or_insert(FlowStats {
            origin,
            destination,
            ..FlowStats::default()
        });
    }

    pub fn generated(&mut self, p: &PacketInfo) {
        if let Some(f) = self.flows.get_mut(&(p.origin, p.destination)) {
            f.generated += 1;
        }
        if self.audit {
            self.generated_ids.insert(p.id);
        }
    }

    /// Record a packet reaching its destination; duplicates are ignored.
    pub fn delivered(&mut self, p: &PacketInfo, now: Micros) -> bool {
        if !self.delivered_ids.insert(p.id) {
            return false;
        }
        if now > self.duration || now < self.warmup {
            return true;
        }
        if let Some(f) = self.flows.get_mut(&(p.origin, p.destination)) {
            f.delivered_packets += 1;
            f.delivered_bits += 8 * u64::from(p.len_bytes);
            f.delay_sum_us += u128::from(now.saturating_sub(p.created_at));
        }
        true
    }

    pub fn dropped(&mut self, p: &PacketInfo, cause: DropCause) {
        *self.drops.entry(cause).or_default() += 1;
        if let Some(f) = self.flows.get_mut(&(p.origin, p.destination)) {
            f.dropped += 1;
        }
        if self.audit {
            self.dropped_ids.insert(p.id);
        }
    }

    pub fn enqueued(&mut self, node: NodeId, p: PacketId, now: Micros) {
        if self.audit {
            self.enqueue_log.push((node, p, now));
        }
    }

    pub fn frame_sent(&mut self, kind: FrameKind) {
        *self.frames_sent.entry(kind).or_default() += 1;
    }

    pub fn total_drops(&self) -> u64 {
        self.drops.values().sum()
    }

    pub fn delivered_bits(&self) -> u64 {
        self.flows.values().map(|f| f.delivered_bits).sum()
    }

    pub fn delivered_packets(&self) -> u64 {
        self.flows.values().map(|f| f.delivered_packets).sum()
    }

    /// Aggregate delivered payload rate over the whole run.
    pub fn throughput_bps(&self) -> f64 {
        let span = self.duration - self.warmup.min(self.duration);
        self.flows.values().map(|f| f.throughput_bps(span)).sum()
    }

    /// Mean end-to-end delay over delivered packets, `None` if nothing
    /// arrived.
    pub fn mean_delay_s(&self) -> Option<f64> {
        let n: u64 = self.delivered_packets();
        let sum: u128 = self.flows.values().map(|f| f.delay_sum_us).sum();
        (n > 0).then(|| sum as f64 / n as f64 / MICROS_PER_SEC as f64)
    }

    pub fn generated_ids(&self) -> &BTreeSet<PacketId> {
        &self.generated_ids
    }

    pub fn delivered_ids(&self) -> &BTreeSet<PacketId> {
        &self.delivered_ids
    }

    pub fn dropped_ids(&self) -> &BTreeSet<PacketId> {
        &self.dropped_ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(id: u64, at: Micros) -> PacketInfo {
        PacketInfo {
            id: PacketId(id),
            origin: NodeId(1),
            destination: NodeId(2),
            len_bytes: 1000,
            created_at: at,
        }
    }

    #[test]
    fn empty_run_reports_no_delay() {
        let mut m = Metrics::new(10 * MICROS_PER_SEC, false);
        m.add_flow(NodeId(1), NodeId(2));
        assert_eq!(m.throughput_bps(), 0.0);
        assert_eq!(m.mean_delay_s(), None);
    }

    #[test]
    fn one_packet_in_ten_seconds() {
        let mut m = Metrics::new(10 * MICROS_PER_SEC, false);
        m.add_flow(NodeId(1), NodeId(2));
        assert!(m.delivered(&pkt(1, 0), 500_000));
        assert!(!m.delivered(&pkt(1, 0), 600_000));
        assert!((m.throughput_bps() - 800.0).abs() < 1e-9);
        assert_eq!(m.mean_delay_s(), Some(0.5));
    }

    #[test]
    fn aggregate_is_sum_of_flows() {
        let mut m = Metrics::new(MICROS_PER_SEC, false);
        m.add_flow(NodeId(1), NodeId(2));
        m.add_flow(NodeId(2), NodeId(1));
        m.delivered(&pkt(1, 0), 10);
        let mut back = pkt(2, 0);
        back.origin = NodeId(2);
        back.destination = NodeId(1);
        m.delivered(&back, 10);
        let sum: f64 = m.flows.values().map(|f| f.throughput_bps(m.duration)).sum();
        assert_eq!(m.throughput_bps(), sum);
        assert_eq!(sum, 16_000.0);
    }
}
