//! Per-node MAC state machines.
//!
//! All three protocols share one engine: DCF contention with RTS/CTS
//! unicast, plus the relay-initiated PNC exchange and the two-way XOR (CNC)
//! exchange when the queue discipline enables them. A node never touches the
//! medium directly; it reacts to kernel callbacks and pushes [`Action`]s.

mod cnc;
mod pnc;

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::frames::{
    nav_cts_reply, nav_rts, nav_unicast_data, CoPncMode, CtsRole, DataFrame, Frame, PacketInfo,
    QueueAdvert, TimingParams,
};
use crate::ids::{Micros, NodeId, PacketId};
use crate::queueing::{
    select_action, ActualQueue, QueuedPacket, RetryOutcome, SelectOptions, TxAction,
    VirtualQueue, WaitFlags, DEFAULT_CAPACITY,
};
use crate::sim::metrics::{DropCause, Metrics};
use crate::sim::topology::Routes;

pub use cnc::xor_code;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacParams {
    pub cw_min: u32,
    pub cw_max: u32,
    pub retry_limit: u32,
    pub queue_capacity: usize,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            cw_min: 31,
            cw_max: 1023,
            retry_limit: 7,
            queue_capacity: DEFAULT_CAPACITY,
        }
    }
}

/// How a node picks its next transmission.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Discipline {
    /// Plain 802.11: always the head of the queue, no neighbour state.
    Fifo,
    /// Actual plus virtual queues with the PNC/CNC selector.
    Coded(SelectOptions),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacConfig {
    pub timing: TimingParams,
    pub params: MacParams,
    pub discipline: Discipline,
}

impl MacConfig {
    fn options(&self) -> SelectOptions {
        match self.discipline {
            Discipline::Fifo => SelectOptions { pnc: false, cnc: false },
            Discipline::Coded(o) => o,
        }
    }
}

/// Chip error probability imposed by the relay on part of a PNC forward,
/// as offsets from the forward's first bit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileSegment {
    pub start: Micros,
    pub end: Micros,
    pub chip_ber: f64,
}

/// Side information travelling with a transmission.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TxMeta {
    pub relay_profile: Vec<ProfileSegment>,
    /// Source frames mixed into a PNC forward; a destination recovers its
    /// partner's frame by subtracting its own.
    pub pnc_headers: Vec<DataFrame>,
}

/// A frame as seen by one receiver.
#[derive(Clone, Copy, Debug)]
pub struct Reception<'a> {
    pub from: NodeId,
    pub frame: &'a Frame,
    pub meta: &'a TxMeta,
    pub start: Micros,
    pub end: Micros,
    /// Absolute expiry of the NAV carried by the frame.
    pub nav_end: Micros,
    pub header_ok: bool,
    pub body_ok: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Slot {
    Backoff,
    Send,
    Step,
    Deadline,
    Wake,
    WaitFlag,
}

const SLOTS: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Transmit { frame: Frame, meta: TxMeta },
    Timer { slot: Slot, at: Micros, gen: u64 },
    /// Merge the next frame from `second` into an ongoing reception from
    /// `first` (or clear the expectation).
    ExpectSuperposed(Option<(NodeId, NodeId)>),
    /// A locally generated packet left its origin queue.
    LeftOrigin(PacketInfo),
}

pub struct Ctx<'a> {
    pub now: Micros,
    pub cfg: &'a MacConfig,
    pub routes: &'a Routes,
    pub rng: &'a mut ChaCha8Rng,
    pub metrics: &'a mut Metrics,
    pub out: &'a mut Vec<Action>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UStage {
    Rts,
    Data,
}

#[derive(Clone, Debug)]
struct Unicast {
    packet: PacketId,
    to: NodeId,
    stage: UStage,
    got: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RStage {
    RtsPnc,
    Decide,
    AwaitSingle,
    AwaitSuperposed,
    Forward,
    AwaitAcks,
}

#[derive(Clone, Debug)]
struct RelaySession {
    a: NodeId,
    b: NodeId,
    stage: RStage,
    cts: [Option<(bool, Micros)>; 2],
    mode: Option<CoPncMode>,
    nav_co: Micros,
    co_end: Micros,
    acked: [bool; 2],
    started: Micros,
    queue_before: usize,
    packets: Vec<PacketId>,
    pair: ((NodeId, NodeId), (NodeId, NodeId)),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SStage {
    AwaitCo,
    Data,
    AwaitForward,
    AwaitAckPnc,
    AwaitAck,
}

#[derive(Clone, Debug)]
struct SourceSession {
    relay: NodeId,
    partner: NodeId,
    role: CtsRole,
    packet: PacketId,
    stage: SStage,
    both: bool,
    got_ack: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CStage {
    Rts,
    Data,
}

#[derive(Clone, Debug)]
struct CncSession {
    /// Packet toward `dests[0]` and packet toward `dests[1]`.
    packets: [PacketId; 2],
    dests: [NodeId; 2],
    stage: CStage,
    cts: [bool; 2],
    acked: [bool; 2],
}

#[derive(Clone, Debug)]
enum Exchange {
    Unicast(Unicast),
    Respond { peer: NodeId },
    Relay(RelaySession),
    Source(SourceSession),
    CncRelay(CncSession),
    CncDest { relay: NodeId, other: NodeId },
}

impl Exchange {
    fn has_peer(&self, n: NodeId) -> bool {
        match self {
            Exchange::Unicast(u) => u.to == n,
            Exchange::Respond { peer } => *peer == n,
            Exchange::Relay(r) => r.a == n || r.b == n,
            Exchange::Source(s) => s.relay == n || s.partner == n,
            Exchange::CncRelay(c) => c.dests.contains(&n),
            Exchange::CncDest { relay, other, .. } => *relay == n || *other == n,
        }
    }
}

/// Observable phase of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Pending,
    Transmitting,
}

pub struct Node {
    pub id: NodeId,
    pub queue: ActualQueue,
    pub virt: VirtualQueue,
    pub flags: WaitFlags,
    seen: BTreeSet<PacketId>,
    nav_until: Micros,
    hold_until: Micros,
    phys_busy: bool,
    transmitting: bool,
    cw: u32,
    backoff: Option<u32>,
    idle_since: Option<Micros>,
    backoff_due: Option<Micros>,
    wake_at: Option<Micros>,
    flag_timer_at: Option<Micros>,
    exchange: Option<Exchange>,
    scheduled: Option<(Frame, TxMeta)>,
    gens: [u64; SLOTS],
    pnc_failures: Option<(((NodeId, NodeId), (NodeId, NodeId)), u32)>,
}

impl Node {
    pub fn new(id: NodeId, cfg: &MacConfig) -> Node {
        Node {
            id,
            queue: ActualQueue::new(cfg.params.queue_capacity),
            virt: VirtualQueue::new(cfg.params.queue_capacity),
            flags: WaitFlags::default(),
            seen: BTreeSet::new(),
            nav_until: 0,
            hold_until: 0,
            phys_busy: false,
            transmitting: false,
            cw: cfg.params.cw_min,
            backoff: None,
            idle_since: None,
            backoff_due: None,
            wake_at: None,
            flag_timer_at: None,
            exchange: None,
            scheduled: None,
            gens: [0; SLOTS],
            pnc_failures: None,
        }
    }

    pub fn nav_until(&self) -> Micros {
        self.nav_until
    }

    /// Packets currently in the actual queue, head first.
    pub fn queued(&self) -> Vec<PacketInfo> {
        self.queue.iter().map(|p| p.info).collect()
    }

    pub fn contention_window(&self) -> u32 {
        self.cw
    }

    pub fn is_transmitting(&self) -> bool {
        self.transmitting
    }

    /// True while the node takes part in a frame exchange.
    pub fn in_exchange(&self) -> bool {
        self.exchange.is_some()
    }

    pub fn phase(&self, now: Micros, cfg: &MacConfig) -> Phase {
        if self.transmitting || self.exchange.is_some() {
            Phase::Transmitting
        } else if self.select(now, cfg) != TxAction::None {
            Phase::Pending
        } else {
            Phase::Idle
        }
    }

    fn select(&self, now: Micros, cfg: &MacConfig) -> TxAction {
        match cfg.discipline {
            Discipline::Fifo => self
                .queue
                .iter()
                .next()
                .map_or(TxAction::None, |p| TxAction::Unicast(p.info.id)),
            Discipline::Coded(opts) => select_action(&self.queue, &self.virt, &self.flags, now, opts),
        }
    }

    fn coded(cfg: &MacConfig) -> bool {
        matches!(cfg.discipline, Discipline::Coded(_))
    }

    // Timers.

    fn set_timer(&mut self, slot: Slot, at: Micros, ctx: &mut Ctx<'_>) {
        debug_assert!(at >= ctx.now, "timer scheduled in the past");
        let g = &mut self.gens[slot as usize];
        *g += 1;
        ctx.out.push(Action::Timer { slot, at, gen: *g });
    }

    fn cancel(&mut self, slot: Slot) {
        self.gens[slot as usize] += 1;
    }

    pub fn on_timer(&mut self, slot: Slot, gen: u64, ctx: &mut Ctx<'_>) {
        if self.gens[slot as usize] != gen {
            return;
        }
        match slot {
            Slot::Backoff => self.on_backoff_done(ctx),
            Slot::Send => {
                if let Some((frame, meta)) = self.scheduled.take() {
                    self.transmit(frame, meta, ctx);
                }
            }
            Slot::Step => self.on_step(ctx),
            Slot::Deadline => self.on_deadline(ctx),
            Slot::Wake => {
                self.wake_at = None;
                self.reevaluate(ctx);
            }
            Slot::WaitFlag => {
                self.flag_timer_at = None;
                self.flags.expire(ctx.now);
                self.arm_flag_timer(ctx);
                self.reevaluate(ctx);
            }
        }
    }

    fn arm_flag_timer(&mut self, ctx: &mut Ctx<'_>) {
        match self.flags.next_deadline() {
            Some(d) if self.flag_timer_at != Some(d) => {
                self.flag_timer_at = Some(d);
                self.set_timer(Slot::WaitFlag, d.max(ctx.now), ctx);
            }
            None if self.flag_timer_at.is_some() => {
                self.flag_timer_at = None;
                self.cancel(Slot::WaitFlag);
            }
            _ => {}
        }
    }

    // Contention.

    fn channel_free(&self, now: Micros) -> bool {
        !self.phys_busy && now >= self.nav_until && now >= self.hold_until
    }

    fn wants_channel(&self, now: Micros, cfg: &MacConfig) -> bool {
        self.exchange.is_none()
            && !self.transmitting
            && self.scheduled.is_none()
            && self.select(now, cfg) != TxAction::None
    }

    /// Start, freeze or resume the DCF countdown after any change of the
    /// channel, queue or exchange state.
    fn reevaluate(&mut self, ctx: &mut Ctx<'_>) {
        let now = ctx.now;
        let t = &ctx.cfg.timing;
        let want = self.wants_channel(now, ctx.cfg);
        let free = self.channel_free(now);
        if want && free {
            if self.idle_since.is_none() {
                let slots = match self.backoff {
                    Some(s) => s,
                    None => {
                        let s = ctx.rng.gen_range(0..=self.cw);
                        self.backoff = Some(s);
                        s
                    }
                };
                let due = now + t.difs + u64::from(slots) * t.slot;
                self.idle_since = Some(now);
                self.backoff_due = Some(due);
                self.set_timer(Slot::Backoff, due, ctx);
            }
            return;
        }
        if let Some(since) = self.idle_since {
            // A countdown expiring at this very instant still fires: two
            // stations picking the same slot collide.
            if want && self.backoff_due == Some(now) {
                return;
            }
            let elapsed = now - since;
            if elapsed > t.difs {
                let used = ((elapsed - t.difs) / t.slot) as u32;
                if let Some(b) = self.backoff.as_mut() {
                    *b -= used.min(*b);
                }
            }
            self.idle_since = None;
            self.backoff_due = None;
            self.cancel(Slot::Backoff);
        }
        if want && !self.phys_busy {
            let until = self.nav_until.max(self.hold_until);
            if until > now && self.wake_at != Some(until) {
                self.wake_at = Some(until);
                self.set_timer(Slot::Wake, until, ctx);
            }
        }
    }

    fn on_backoff_done(&mut self, ctx: &mut Ctx<'_>) {
        self.idle_since = None;
        self.backoff_due = None;
        self.backoff = None;
        match self.select(ctx.now, ctx.cfg) {
            TxAction::None => self.reevaluate(ctx),
            TxAction::Unicast(id) => self.start_unicast(id, ctx),
            TxAction::Cnc { packet, partner } => self.start_cnc(packet, partner, ctx),
            TxAction::Pnc { forward, reverse } => self.start_pnc(forward, reverse, ctx),
        }
    }

    /// Physical carrier sense changed.
    pub fn on_medium(&mut self, busy: bool, ctx: &mut Ctx<'_>) {
        if self.phys_busy != busy {
            self.phys_busy = busy;
            self.reevaluate(ctx);
        }
    }

    fn set_nav(&mut self, until: Micros, ctx: &mut Ctx<'_>) {
        if until > self.nav_until {
            self.nav_until = until;
            self.reevaluate(ctx);
        }
    }

    fn hold(&mut self, until: Micros) {
        self.hold_until = self.hold_until.max(until);
    }

    fn release_hold(&mut self, now: Micros) {
        self.hold_until = self.hold_until.min(now);
    }

    fn finish_exchange(&mut self, ctx: &mut Ctx<'_>) {
        self.exchange = None;
        self.cancel(Slot::Step);
        self.cancel(Slot::Deadline);
        self.release_hold(ctx.now);
        self.reevaluate(ctx);
    }

    // Transmission.

    fn transmit(&mut self, frame: Frame, meta: TxMeta, ctx: &mut Ctx<'_>) {
        if self.transmitting {
            debug_assert!(false, "{} asked to transmit while transmitting", self.id);
            return;
        }
        self.transmitting = true;
        if self.idle_since.is_some() {
            self.idle_since = None;
            self.backoff_due = None;
            self.cancel(Slot::Backoff);
        }
        ctx.metrics.frame_sent(frame.kind());
        ctx.out.push(Action::Transmit { frame, meta });
    }

    fn send_after(&mut self, at: Micros, frame: Frame, meta: TxMeta, ctx: &mut Ctx<'_>) {
        if at <= ctx.now {
            self.transmit(frame, meta, ctx);
        } else {
            self.scheduled = Some((frame, meta));
            self.set_timer(Slot::Send, at, ctx);
        }
    }

    /// Our own transmission finished.
    pub fn on_tx_end(&mut self, frame: &Frame, ctx: &mut Ctx<'_>) {
        self.transmitting = false;
        let t = &ctx.cfg.timing;
        let now = ctx.now;
        let (sifs, t_cts, t_ack) = (t.sifs, t.t_cts(), t.t_ack());
        match self.exchange.as_mut() {
            Some(Exchange::Unicast(u)) => {
                let at = match u.stage {
                    UStage::Rts => now + 2 * sifs + t_cts,
                    UStage::Data => now + 2 * sifs + t_ack,
                };
                self.set_timer(Slot::Step, at, ctx);
            }
            Some(Exchange::Respond { .. }) => {
                if matches!(frame, Frame::Ack { .. }) {
                    self.finish_exchange(ctx);
                }
            }
            Some(Exchange::Relay(_)) => self.relay_tx_end(frame, ctx),
            Some(Exchange::Source(_)) => self.source_tx_end(frame, ctx),
            Some(Exchange::CncRelay(c)) => {
                let at = match c.stage {
                    CStage::Rts => now + 3 * sifs + 2 * t_cts,
                    CStage::Data => now + 3 * sifs + 2 * t_ack,
                };
                self.set_timer(Slot::Step, at, ctx);
            }
            Some(Exchange::CncDest { .. }) => {
                if matches!(frame, Frame::Ack { .. }) {
                    self.finish_exchange(ctx);
                }
            }
            None => self.reevaluate(ctx),
        }
    }

    /// A half-duplex transmission of ours was cut short by the kernel; never
    /// happens in the current model but keeps the state machine total.
    pub fn on_step_timeout(&mut self, ctx: &mut Ctx<'_>) {
        self.on_step(ctx);
    }

    fn on_step(&mut self, ctx: &mut Ctx<'_>) {
        match self.exchange.clone() {
            Some(Exchange::Unicast(u)) => self.unicast_step(u, ctx),
            Some(Exchange::Relay(_)) => self.relay_step(ctx),
            Some(Exchange::Source(_)) => self.source_step(ctx),
            Some(Exchange::CncRelay(_)) => self.cnc_step(ctx),
            _ => {}
        }
    }

    fn on_deadline(&mut self, ctx: &mut Ctx<'_>) {
        match self.exchange.clone() {
            Some(Exchange::Relay(_)) => self.relay_deadline(ctx),
            Some(Exchange::Source(_)) => self.source_deadline(ctx),
            Some(Exchange::Respond { .. }) | Some(Exchange::CncDest { .. }) => {
                self.finish_exchange(ctx)
            }
            _ => {}
        }
    }

    // Outcome bookkeeping.

    fn packet_succeeded(&mut self, id: PacketId, ctx: &mut Ctx<'_>) {
        if let Some(p) = self.queue.remove(id) {
            if p.prev_hop.is_none() {
                ctx.out.push(Action::LeftOrigin(p.info));
            }
        }
        self.after_queue_change(ctx);
    }

    fn packet_failed(&mut self, id: PacketId, ctx: &mut Ctx<'_>) {
        let info = self.queue.get(id).map(|p| (p.info, p.prev_hop.is_none()));
        if let (RetryOutcome::Exhausted, Some((info, local))) =
            (self.queue.record_failure(id, ctx.cfg.params.retry_limit), info)
        {
            ctx.metrics.dropped(&info, DropCause::RetryLimit);
            if local {
                ctx.out.push(Action::LeftOrigin(info));
            }
            self.cw = ctx.cfg.params.cw_min;
        }
        self.after_queue_change(ctx);
    }

    fn exchange_failed(&mut self, ctx: &mut Ctx<'_>) {
        self.cw = (2 * self.cw + 1).min(ctx.cfg.params.cw_max);
    }

    fn exchange_succeeded(&mut self, ctx: &mut Ctx<'_>) {
        self.cw = ctx.cfg.params.cw_min;
    }

    fn after_queue_change(&mut self, ctx: &mut Ctx<'_>) {
        if self.flags.prune(&self.queue) > 0 {
            self.arm_flag_timer(ctx);
        }
    }

    /// Put a locally generated packet into the queue.
    pub fn enqueue_local(&mut self, info: PacketInfo, ctx: &mut Ctx<'_>) -> bool {
        let Some(next) = ctx.routes.next_hop(self.id, info.destination) else {
            ctx.metrics.dropped(&info, DropCause::QueueFull);
            return false;
        };
        let entry = QueuedPacket {
            info,
            prev_hop: None,
            next_hop: next,
            second_hop: ctx.routes.second_hop(self.id, info.destination),
            enqueued_at: ctx.now,
            t_q_prev: 0,
            retries: 0,
            cnc_partial: false,
        };
        let ok = self.queue.enqueue(entry);
        if ok {
            ctx.metrics.enqueued(self.id, info.id, ctx.now);
        } else {
            ctx.metrics.dropped(&info, DropCause::QueueFull);
        }
        self.reevaluate(ctx);
        ok
    }

    /// Take in a packet handed to us over the air. Returns the advert for
    /// our ACK.
    fn accept_packet(
        &mut self,
        info: PacketInfo,
        from: NodeId,
        t_q_prev: Micros,
        ctx: &mut Ctx<'_>,
    ) -> Option<QueueAdvert> {
        if info.destination == self.id {
            if self.seen.insert(info.id) {
                ctx.metrics.delivered(&info, ctx.now);
            }
            return None;
        }
        let next = ctx.routes.next_hop(self.id, info.destination)?;
        let second = ctx.routes.second_hop(self.id, info.destination);
        if self.seen.insert(info.id) {
            let entry = QueuedPacket {
                info,
                prev_hop: Some(from),
                next_hop: next,
                second_hop: second,
                enqueued_at: ctx.now,
                t_q_prev,
                retries: 0,
                cnc_partial: false,
            };
            if self.queue.enqueue(entry) {
                ctx.metrics.enqueued(self.id, info.id, ctx.now);
            } else {
                ctx.metrics.dropped(&info, DropCause::QueueFull);
            }
        }
        second.map(|s| self.queue.advert_for_key((next, s), ctx.now))
    }

    /// DATA frame carrying `p` toward its next hop.
    fn data_frame_for(&self, p: &QueuedPacket, duration: Micros, ctx: &Ctx<'_>) -> DataFrame {
        let advert = self.queue.advert_after(p, ctx.now);
        let wait = match (ctx.cfg.options().pnc, p.prev_hop) {
            (true, Some(prev)) => {
                self.virt.get((p.next_hop, prev)).is_some() && self.virt.get((prev, p.next_hop)).is_some()
            }
            _ => false,
        };
        DataFrame {
            duration,
            transmitter: self.id,
            receiver: p.next_hop,
            receiver2: None,
            second_hop: p.second_hop,
            prev_hop: p.prev_hop,
            t_q_cur_ms: advert.map_or(crate::frames::quantize_ms(p.t_q(ctx.now)), |a| a.t_q_cur_ms),
            next_offset_ms: advert.map_or(0, |a| a.t_q_next_offset_ms),
            len_next: advert.map_or(0, |a| a.len_next),
            wait_for_pnc: wait,
            bit_reversed: false,
            superposed: false,
            packets: vec![p.info],
        }
    }

    // Reception.

    fn is_participant(&self, from: NodeId, frame: &Frame) -> bool {
        frame.addressees().contains(&self.id)
            || self.exchange.as_ref().is_some_and(|e| e.has_peer(from))
    }

    /// A frame ended whose reception we had locked onto.
    pub fn on_frame(&mut self, rx: &Reception<'_>, ctx: &mut Ctx<'_>) {
        if !rx.header_ok {
            return;
        }
        if !self.is_participant(rx.from, rx.frame) {
            self.set_nav(rx.nav_end, ctx);
        }
        if !rx.body_ok {
            return;
        }
        let me = self.id;
        match rx.frame {
            Frame::Rts { ra, duration, .. } if *ra == me => self.on_rts(rx.from, *duration, ctx),
            Frame::Cts { ra, has_packet, duration } if *ra == me => {
                self.on_cts(rx.from, *has_packet, *duration)
            }
            Frame::RtsPnc { src_a, src_b, relay, .. } if *src_a == me || *src_b == me => {
                let role = if *src_a == me { CtsRole::A } else { CtsRole::B };
                let partner = if *src_a == me { *src_b } else { *src_a };
                self.on_rts_pnc(*relay, partner, role, ctx)
            }
            Frame::CoPnc { .. } => self.on_co_pnc(rx, ctx),
            Frame::Data(d) if d.receiver2.is_some() && d.is_for(me) => self.on_pnc_forward(rx, d, ctx),
            Frame::Data(d) if d.receiver == me && !d.superposed => self.on_data(rx.from, d, ctx),
            Frame::Ack { ta, advert, .. } => self.on_ack(*ta, advert.as_ref(), ctx),
            Frame::AckPnc { acked, acked2, .. } => self.on_ack_pnc(rx.from, *acked, *acked2, ctx),
            Frame::CncRts { destinations, duration, .. } => {
                if let Some(i) = destinations.iter().position(|d| *d == me) {
                    self.on_cnc_rts(rx.from, destinations, i, *duration, ctx)
                }
            }
            Frame::CncData(d) if d.is_for(me) => self.on_cnc_data(rx.from, d, ctx),
            _ => {}
        }
    }

    fn may_respond(&self, now: Micros) -> bool {
        !self.transmitting && self.exchange.is_none() && self.scheduled.is_none() && now >= self.nav_until
    }

    fn on_rts(&mut self, from: NodeId, duration: Micros, ctx: &mut Ctx<'_>) {
        if !self.may_respond(ctx.now) {
            return;
        }
        let t = &ctx.cfg.timing;
        let cts = Frame::Cts {
            duration: nav_cts_reply(duration, t),
            ra: from,
            has_packet: false,
        };
        let at = ctx.now + t.sifs;
        let until = ctx.now + duration;
        self.exchange = Some(Exchange::Respond { peer: from });
        self.hold(until);
        self.set_timer(Slot::Deadline, until, ctx);
        self.reevaluate(ctx);
        self.send_after(at, cts, TxMeta::default(), ctx);
    }

    fn on_cts(&mut self, from: NodeId, has_packet: bool, duration: Micros) {
        match self.exchange.as_mut() {
            Some(Exchange::Unicast(u)) if u.to == from && u.stage == UStage::Rts => u.got = true,
            Some(Exchange::Relay(_)) => self.relay_on_cts(from, has_packet, duration),
            Some(Exchange::CncRelay(c)) if c.stage == CStage::Rts => {
                if let Some(i) = c.dests.iter().position(|d| *d == from) {
                    c.cts[i] = true;
                }
            }
            _ => {}
        }
    }

    fn on_data(&mut self, from: NodeId, d: &DataFrame, ctx: &mut Ctx<'_>) {
        if self.transmitting {
            return;
        }
        if Self::coded(ctx.cfg) {
            if let Some(ad) = d.advert() {
                self.virt.ingest_advert(from, &ad, ctx.now);
            }
            if d.wait_for_pnc {
                if let Some(prev) = d.prev_hop {
                    let key = (from, prev);
                    if self.queue.first_with_key(key).is_some() {
                        self.flags.set(key, ctx.now, ctx.cfg.timing.pnc_wait_timeout);
                        self.arm_flag_timer(ctx);
                    }
                }
            }
        }
        let t_q_prev = Micros::from(d.t_q_cur_ms) * 1000;
        let advert = self.accept_packet(d.packets[0], from, t_q_prev, ctx);
        if let Some(Exchange::Relay(r)) = self.exchange.as_mut() {
            if r.stage == RStage::AwaitSingle && (from == r.a || from == r.b) {
                r.packets.push(d.packets[0].id);
                r.stage = RStage::AwaitAcks;
            }
        }
        let ack = Frame::Ack {
            duration: 0,
            ta: self.id,
            advert,
        };
        let at = ctx.now + ctx.cfg.timing.sifs;
        self.send_after(at, ack, TxMeta::default(), ctx);
        self.reevaluate(ctx);
    }

    fn on_ack(&mut self, ta: NodeId, advert: Option<&QueueAdvert>, ctx: &mut Ctx<'_>) {
        if Self::coded(ctx.cfg) {
            if let Some(ad) = advert.filter(|a| a.next_hop == self.id) {
                self.virt.ingest_advert(ta, ad, ctx.now);
            }
        }
        match self.exchange.as_mut() {
            Some(Exchange::Unicast(u)) if u.to == ta && u.stage == UStage::Data => u.got = true,
            Some(Exchange::Relay(r)) if r.stage == RStage::AwaitAcks => {
                if ta == r.a {
                    r.acked[0] = true;
                } else if ta == r.b {
                    r.acked[1] = true;
                }
            }
            Some(Exchange::Source(s)) if s.stage == SStage::AwaitAck && s.relay == ta => s.got_ack = true,
            Some(Exchange::CncRelay(c)) if c.stage == CStage::Data => {
                if let Some(i) = c.dests.iter().position(|d| *d == ta) {
                    c.acked[i] = true;
                }
            }
            _ => {}
        }
        self.reevaluate(ctx);
    }

    // Unicast initiator.

    fn start_unicast(&mut self, id: PacketId, ctx: &mut Ctx<'_>) {
        let Some(p) = self.queue.get(id) else {
            return self.reevaluate(ctx);
        };
        let t = &ctx.cfg.timing;
        let data_air = t.t_data(u64::from(p.info.len_bytes));
        let to = p.next_hop;
        let rts = Frame::Rts {
            duration: nav_rts(data_air, t),
            ra: to,
            ta: self.id,
        };
        self.exchange = Some(Exchange::Unicast(Unicast {
            packet: id,
            to,
            stage: UStage::Rts,
            got: false,
        }));
        self.transmit(rts, TxMeta::default(), ctx);
    }

    /// Skip the handshake and send DATA right away (the CTS was already
    /// obtained by a coded exchange that fell through).
    fn unicast_data_now(&mut self, id: PacketId, ctx: &mut Ctx<'_>) {
        let Some(p) = self.queue.get(id) else {
            return self.finish_exchange(ctx);
        };
        let data = self.data_frame_for(p, nav_unicast_data(&ctx.cfg.timing), ctx);
        self.exchange = Some(Exchange::Unicast(Unicast {
            packet: id,
            to: p.next_hop,
            stage: UStage::Data,
            got: false,
        }));
        self.transmit(Frame::Data(data), TxMeta::default(), ctx);
    }

    fn unicast_step(&mut self, u: Unicast, ctx: &mut Ctx<'_>) {
        match (u.stage, u.got) {
            (UStage::Rts, true) => self.unicast_data_now(u.packet, ctx),
            (UStage::Data, true) => {
                ctx.metrics.exchanges.unicast += 1;
                self.exchange_succeeded(ctx);
                self.packet_succeeded(u.packet, ctx);
                self.finish_exchange(ctx);
            }
            (_, false) => {
                self.exchange_failed(ctx);
                self.packet_failed(u.packet, ctx);
                self.finish_exchange(ctx);
            }
        }
    }
}
