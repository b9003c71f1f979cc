//! Actual and virtual queues, wait-for-PNC flags and the transmission
//! selector.
//!
//! Residence clocks are stored as absolute timestamps and differenced at
//! evaluation time, so advancing `now` never touches queue state.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use crate::frames::{quantize_ms, PacketInfo, QueueAdvert, MAX_OFFSET_MS};
use crate::ids::{Micros, NodeId, PacketId};

pub const DEFAULT_CAPACITY: usize = 50;

/// A packet waiting in a node's own queue.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueuedPacket {
    pub info: PacketInfo,
    /// Node the packet came from; `None` for locally generated packets.
    pub prev_hop: Option<NodeId>,
    pub next_hop: NodeId,
    /// `None` when `next_hop` is the final destination.
    pub second_hop: Option<NodeId>,
    pub enqueued_at: Micros,
    /// Residence time at the previous hop, frozen at reception.
    pub t_q_prev: Micros,
    pub retries: u32,
    /// A coded broadcast reached only one of its destinations; send this
    /// packet natively next time.
    pub cnc_partial: bool,
}

impl QueuedPacket {
    pub fn t_q(&self, now: Micros) -> Micros {
        now.saturating_sub(self.enqueued_at)
    }

    pub fn key(&self) -> Option<(NodeId, NodeId)> {
        Some((self.next_hop, self.second_hop?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetryOutcome {
    Retained(u32),
    Exhausted,
    Missing,
}

/// FIFO of a node's own packets.
#[derive(Clone, Debug)]
pub struct ActualQueue {
    entries: VecDeque<QueuedPacket>,
    capacity: usize,
}

impl ActualQueue {
    pub fn new(capacity: usize) -> Self {
        ActualQueue { entries: VecDeque::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedPacket> {
        self.entries.iter()
    }

    /// Append at the tail; `false` (the packet is dropped) when full.
    pub fn enqueue(&mut self, packet: QueuedPacket) -> bool {
        if self.entries.len() >= self.capacity {
            return false;
        }
        self.entries.push_back(packet);
        true
    }

    pub fn get(&self, id: PacketId) -> Option<&QueuedPacket> {
        self.entries.iter().find(|p| p.info.id == id)
    }

    pub fn get_mut(&mut self, id: PacketId) -> Option<&mut QueuedPacket> {
        self.entries.iter_mut().find(|p| p.info.id == id)
    }

    pub fn remove(&mut self, id: PacketId) -> Option<QueuedPacket> {
        let pos = self.entries.iter().position(|p| p.info.id == id)?;
        self.entries.remove(pos)
    }

    /// First packet routed via `next_hop` then `second_hop`.
    pub fn first_with_key(&self, key: (NodeId, NodeId)) -> Option<&QueuedPacket> {
        self.entries.iter().find(|p| p.key() == Some(key))
    }

    pub fn count_with_key(&self, key: (NodeId, NodeId)) -> usize {
        self.entries.iter().filter(|p| p.key() == Some(key)).count()
    }

    /// Advert describing the packet queued behind `current` with the same
    /// next and second hop.
    pub fn advert_after(&self, current: &QueuedPacket, now: Micros) -> Option<QueueAdvert> {
        let key = current.key()?;
        let next = self
            .entries
            .iter()
            .filter(|p| p.key() == Some(key))
            .find(|p| p.info.id != current.info.id);
        let t_cur = current.t_q(now);
        Some(match next {
            Some(n) => QueueAdvert {
                next_hop: key.0,
                second_hop: key.1,
                t_q_cur_ms: quantize_ms(t_cur),
                t_q_next_offset_ms: quantize_ms(t_cur)
                    .saturating_sub(quantize_ms(n.t_q(now)))
                    .min(MAX_OFFSET_MS),
                len_next: n.info.len_bytes,
            },
            None => QueueAdvert {
                next_hop: key.0,
                second_hop: key.1,
                t_q_cur_ms: quantize_ms(t_cur),
                t_q_next_offset_ms: 0,
                len_next: 0,
            },
        })
    }

    /// Advert describing the first packet with the given key, as carried in
    /// an ACK.
    pub fn advert_for_key(&self, key: (NodeId, NodeId), now: Micros) -> QueueAdvert {
        let first = self.first_with_key(key);
        QueueAdvert {
            next_hop: key.0,
            second_hop: key.1,
            t_q_cur_ms: first.map_or(0, |p| quantize_ms(p.t_q(now))),
            t_q_next_offset_ms: 0,
            len_next: first.map_or(0, |p| p.info.len_bytes),
        }
    }

    /// Count a failed attempt. The entry is removed once its retry count
    /// reaches `limit`.
    pub fn record_failure(&mut self, id: PacketId, limit: u32) -> RetryOutcome {
        let Some(p) = self.get_mut(id) else {
            return RetryOutcome::Missing;
        };
        p.retries += 1;
        if p.retries >= limit {
            self.remove(id);
            RetryOutcome::Exhausted
        } else {
            RetryOutcome::Retained(p.retries)
        }
    }
}

/// Summary of the first packet a neighbour holds for forwarding through us.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VirtualPacket {
    pub prev_hop: NodeId,
    pub next_hop: NodeId,
    pub length: u16,
    /// When the packet entered the previous hop's queue.
    pub prev_enqueued_at: Micros,
}

impl VirtualPacket {
    pub fn key(&self) -> (NodeId, NodeId) {
        (self.prev_hop, self.next_hop)
    }

    pub fn t_vq_prev(&self, now: Micros) -> Micros {
        now.saturating_sub(self.prev_enqueued_at)
    }
}

/// Virtual queue, kept sorted by residence time at the previous hop
/// (oldest first), with at most one entry per (prev, next) pair.
#[derive(Clone, Debug)]
pub struct VirtualQueue {
    entries: Vec<VirtualPacket>,
    capacity: usize,
}

impl VirtualQueue {
    pub fn new(capacity: usize) -> Self {
        VirtualQueue { entries: Vec::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VirtualPacket] {
        &self.entries
    }

    pub fn get(&self, key: (NodeId, NodeId)) -> Option<&VirtualPacket> {
        self.entries.iter().find(|v| v.key() == key)
    }

    pub fn remove(&mut self, key: (NodeId, NodeId)) -> Option<VirtualPacket> {
        let pos = self.entries.iter().position(|v| v.key() == key)?;
        Some(self.entries.remove(pos))
    }

    /// Insert or replace the entry for its key. Returns `false` if the queue
    /// is full and the key is new.
    pub fn upsert(&mut self, entry: VirtualPacket) -> bool {
        if let Some(slot) = self.entries.iter_mut().find(|v| v.key() == entry.key()) {
            *slot = entry;
        } else if self.entries.len() >= self.capacity {
            return false;
        } else {
            self.entries.push(entry);
        }
        self.entries
            .sort_by_key(|v| (v.prev_enqueued_at, v.prev_hop, v.next_hop));
        true
    }

    /// Apply an advert from `sender` about its first packet routed through
    /// us toward `advert.second_hop`. The caller has checked that
    /// `advert.next_hop` is this node.
    pub fn ingest_advert(&mut self, sender: NodeId, advert: &QueueAdvert, now: Micros) {
        let key = (sender, advert.second_hop);
        if advert.len_next == 0 {
            self.remove(key);
            return;
        }
        let age = Micros::from(advert.t_q_next_ms()) * 1000;
        self.upsert(VirtualPacket {
            prev_hop: sender,
            next_hop: advert.second_hop,
            length: advert.len_next,
            prev_enqueued_at: now.saturating_sub(age),
        });
    }
}

/// Position of the first entry having a reverse entry, and of the
/// front-most such reverse entry.
pub fn find_reverse_pair(vq: &VirtualQueue) -> Option<(usize, usize)> {
    let e = vq.entries();
    e.iter().enumerate().find_map(|(i, v)| {
        e.iter()
            .position(|w| w.prev_hop == v.next_hop && w.next_hop == v.prev_hop)
            .map(|j| (i, j))
    })
}

/// Wait-for-PNC flags keyed by (next hop, second hop), each with the
/// deadline after which it lapses without a PNC request.
#[derive(Clone, Debug, Default)]
pub struct WaitFlags {
    flags: BTreeMap<(NodeId, NodeId), Micros>,
}

impl WaitFlags {
    pub fn set(&mut self, key: (NodeId, NodeId), now: Micros, timeout: Micros) {
        self.flags.insert(key, now + timeout);
    }

    pub fn clear(&mut self, key: (NodeId, NodeId)) -> bool {
        self.flags.remove(&key).is_some()
    }

    /// A PNC request arrived from `relay`; restart the timeout of flags
    /// naming it.
    pub fn rearm(&mut self, relay: NodeId, now: Micros, timeout: Micros) {
        for (k, deadline) in self.flags.iter_mut() {
            if k.0 == relay {
                *deadline = now + timeout;
            }
        }
    }

    pub fn is_waiting(&self, key: (NodeId, NodeId), now: Micros) -> bool {
        self.flags.get(&key).is_some_and(|&d| d > now)
    }

    /// Drop flags whose deadline has passed; returns how many lapsed.
    pub fn expire(&mut self, now: Micros) -> usize {
        let before = self.flags.len();
        self.flags.retain(|_, d| *d > now);
        before - self.flags.len()
    }

    /// Drop flags with no matching packet left in the queue.
    pub fn prune(&mut self, queue: &ActualQueue) -> usize {
        let before = self.flags.len();
        self.flags.retain(|k, _| queue.first_with_key(*k).is_some());
        before - self.flags.len()
    }

    pub fn next_deadline(&self) -> Option<Micros> {
        self.flags.values().copied().min()
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.flags.keys().copied()
    }

    pub fn packet_waits(&self, p: &QueuedPacket, now: Micros) -> bool {
        p.key().is_some_and(|k| self.is_waiting(k, now))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxAction {
    None,
    Unicast(PacketId),
    Cnc { packet: PacketId, partner: PacketId },
    /// Request PNC for the packets summarised by two reverse virtual
    /// entries, each given as (prev hop, next hop).
    Pnc {
        forward: (NodeId, NodeId),
        reverse: (NodeId, NodeId),
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SelectOptions {
    pub pnc: bool,
    pub cnc: bool,
}

/// The other half of a two-way XOR coding opportunity for `p`: the first
/// eligible packet that arrived from p's next hop and leaves toward p's
/// previous hop.
pub fn cnc_partner<'a>(
    actual: &'a ActualQueue,
    p: &QueuedPacket,
    flags: &WaitFlags,
    now: Micros,
) -> Option<&'a QueuedPacket> {
    if p.cnc_partial {
        return None;
    }
    let prev = p.prev_hop?;
    actual.iter().find(|q| {
        q.info.id != p.info.id
            && !q.cnc_partial
            && q.prev_hop == Some(p.next_hop)
            && q.next_hop == prev
            && !flags.packet_waits(q, now)
    })
}

/// Pick what to transmit next and how.
pub fn select_action(
    actual: &ActualQueue,
    virt: &VirtualQueue,
    flags: &WaitFlags,
    now: Micros,
    opts: SelectOptions,
) -> TxAction {
    let p = actual.iter().find(|p| !flags.packet_waits(p, now));
    if opts.pnc {
        let entries = virt.entries();
        for v in entries {
            if let Some(p) = p {
                if v.t_vq_prev(now) < p.t_q(now) + p.t_q_prev {
                    break;
                }
            }
            if let Some(w) = entries
                .iter()
                .find(|w| w.prev_hop == v.next_hop && w.next_hop == v.prev_hop)
            {
                return TxAction::Pnc { forward: v.key(), reverse: w.key() };
            }
        }
    }
    let Some(p) = p else {
        return TxAction::None;
    };
    if opts.cnc {
        if let Some(q) = cnc_partner(actual, p, flags, now) {
            return TxAction::Cnc { packet: p.info.id, partner: q.info.id };
        }
    }
    TxAction::Unicast(p.info.id)
}
