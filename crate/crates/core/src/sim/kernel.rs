//! Event loop and shared-medium model.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frames::{frame_airtime, Frame, FrameKind, PacketInfo};
use crate::ids::{Micros, NodeId, PacketId, MICROS_PER_SEC};
use crate::mac::{Action, Ctx, MacConfig, Node, ProfileSegment, Reception, Slot, TxMeta};
use crate::phy::{
    ber_despread, cca_busy, compose_chip_errors, dbm_to_w, packet_error_prob, pathloss_gain,
    sample_reception, BitSegment, RxOutcome, SignalSegment,
};

use super::metrics::Metrics;
use super::topology::{build_line, build_random, build_wheel, Topology, TopologySpec};
use super::trace::{RxNote, TraceRecord};
use super::{SimConfig, SimError, SimOutput, TrafficModel};

/// A transmission as seen by one receiver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span {
    pub node: NodeId,
    pub start: Micros,
    pub end: Micros,
    /// Power arriving at the receiver, W.
    pub power_w: f64,
}

/// Partition `[start, end)` at every boundary of the spans overlapping it and
/// sum the power of transmitters outside `intended` in each piece.
pub fn interference_segments(
    start: Micros,
    end: Micros,
    intended: &[NodeId],
    spans: &[Span],
) -> Vec<SignalSegment> {
    let others: Vec<&Span> = spans
        .iter()
        .filter(|s| !intended.contains(&s.node) && s.start < end && s.end > start)
        .collect();
    let mut cuts = vec![start, end];
    for s in &others {
        cuts.extend([s.start, s.end].into_iter().filter(|&t| t > start && t < end));
    }
    cuts.sort_unstable();
    cuts.dedup();
    cuts.windows(2)
        .map(|w| SignalSegment {
            start: w[0],
            end: w[1],
            interference_power_w: others
                .iter()
                .filter(|s| s.start <= w[0] && s.end > w[0])
                .map(|s| s.power_w)
                .sum(),
        })
        .collect()
}

fn interference_at(segs: &[SignalSegment], t: Micros) -> f64 {
    segs.iter()
        .find(|s| s.start <= t && t < s.end)
        .map_or(0.0, |s| s.interference_power_w)
}

/// Bit segments over `[w0, w1)` with the chip error given by `chip(t, I)`
/// for each piece between consecutive cut points.
fn bit_segments(
    w0: Micros,
    w1: Micros,
    segs: &[SignalSegment],
    extra_cuts: &[Micros],
    bit_rate: u64,
    chip: impl Fn(Micros, f64) -> f64,
) -> Vec<BitSegment> {
    let mut cuts = vec![w0, w1];
    cuts.extend(
        segs.iter()
            .flat_map(|s| [s.start, s.end])
            .chain(extra_cuts.iter().copied())
            .filter(|&t| t > w0 && t < w1),
    );
    cuts.sort_unstable();
    cuts.dedup();
    cuts.windows(2)
        .map(|w| BitSegment {
            bits: (w[1] - w[0]) * bit_rate,
            ber: ber_despread(chip(w[0], interference_at(segs, w[0]))),
        })
        .collect()
}

fn draw(per_segments: &[BitSegment], rng: &mut ChaCha8Rng) -> bool {
    let per = packet_error_prob(per_segments).unwrap_or(0.0);
    sample_reception(per, rng) == RxOutcome::Ok
}

struct TxRec {
    node: NodeId,
    start: Micros,
    end: Micros,
    frame: Frame,
    meta: TxMeta,
    nav_end: Micros,
    trace_idx: Option<usize>,
}

#[derive(Clone, Copy)]
struct Lock {
    tx: u64,
    merged: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    TxEnd(u64),
    Generate { flow: usize },
    Timer { node: usize, slot: Slot, gen: u64 },
}

impl Event {
    /// Same-instant ordering: frames end before anything reacts to time.
    fn class(&self) -> u8 {
        match self {
            Event::TxEnd(_) => 0,
            Event::Generate { .. } => 1,
            Event::Timer { .. } => 2,
        }
    }
}

struct Kernel<'a> {
    cfg: &'a SimConfig,
    mac: MacConfig,
    topo: Topology,
    /// Received power, indexed `[transmitter][receiver]`.
    power: Vec<Vec<f64>>,
    nodes: Vec<Node>,
    now: Micros,
    seq: u64,
    events: BTreeMap<(Micros, u8, u64), Event>,
    next_tx: u64,
    txs: BTreeMap<u64, TxRec>,
    active: Vec<Option<u64>>,
    locks: Vec<Option<Lock>>,
    busy: Vec<bool>,
    expect: Vec<Option<(NodeId, NodeId)>>,
    lock_threshold_w: f64,
    rng_rx: ChaCha8Rng,
    rng_backoff: ChaCha8Rng,
    rng_traffic: ChaCha8Rng,
    metrics: Metrics,
    trace: Vec<TraceRecord>,
    next_packet: u64,
    /// (origin, destination) of every flow direction.
    directions: Vec<(NodeId, NodeId)>,
    pending: VecDeque<(usize, Action)>,
    draining: bool,
    nav_violations: u64,
}

const STREAM_PLACEMENT: u64 = 1;
const STREAM_TRAFFIC: u64 = 2;
const STREAM_RECEPTION: u64 = 3;
const STREAM_BACKOFF: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

fn build_topology(cfg: &SimConfig) -> Result<Topology, SimError> {
    let range = cfg.link_range_m();
    match &cfg.topology {
        TopologySpec::Wheel { pairs } => build_wheel(*pairs),
        TopologySpec::Line { nodes } => build_line(*nodes, range),
        TopologySpec::Random {
            nodes,
            area_m,
            flows,
            placement_seed,
        } => {
            let mut rng = stream(placement_seed.unwrap_or(cfg.seed), STREAM_PLACEMENT);
            build_random(*nodes, *area_m, *flows, range, &mut rng)
        }
        TopologySpec::Custom { positions, flows } => {
            let flows = flows.iter().map(|&(a, b)| (NodeId(a), NodeId(b))).collect();
            Topology::from_positions(positions.clone(), flows, range)
        }
    }
}

/// Run one simulation to completion.
pub fn run(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let topo = build_topology(cfg)?;
    let n = topo.node_count();
    let mut power = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = topo.distance(NodeId(i as u16), NodeId(j as u16));
                let g = pathloss_gain(d, cfg.phy.path_loss_exp, 0.0)
                    .map_err(|_| SimError::Config("two nodes share a position"))?;
                power[i][j] = cfg.phy.rx_power_w(&g);
            }
        }
    }
    let mac = MacConfig {
        timing: cfg.timing.clone(),
        params: cfg.mac.clone(),
        discipline: cfg.protocol.discipline(),
    };
    let bits = (cfg.timing.t_data(u64::from(cfg.payload_bytes)) - cfg.timing.phy_hdr) * cfg.timing.bit_rate;
    let lock_dbm = cfg.phy.cca_sensitivity_dbm.max(cfg.phy.rss_for_per(0.01, bits) - 6.0);
    let mut metrics = Metrics::new(cfg.duration, cfg.audit);
    metrics.warmup = cfg.warmup;
    let mut directions = Vec::new();
    for &(a, b) in &topo.flows {
        metrics.add_flow(a, b);
        metrics.add_flow(b, a);
        directions.push((a, b));
        directions.push((b, a));
    }
    let nodes = (0..n).map(|i| Node::new(NodeId(i as u16), &mac)).collect();
    let mut k = Kernel {
        cfg,
        mac,
        topo,
        power,
        nodes,
        now: 0,
        seq: 0,
        events: BTreeMap::new(),
        next_tx: 0,
        txs: BTreeMap::new(),
        active: vec![None; n],
        locks: vec![None; n],
        busy: vec![false; n],
        expect: vec![None; n],
        lock_threshold_w: dbm_to_w(lock_dbm),
        rng_rx: stream(cfg.seed, STREAM_RECEPTION),
        rng_backoff: stream(cfg.seed, STREAM_BACKOFF),
        rng_traffic: stream(cfg.seed, STREAM_TRAFFIC),
        metrics,
        trace: Vec::new(),
        next_packet: 0,
        directions,
        pending: VecDeque::new(),
        draining: false,
        nav_violations: 0,
    };
    if cfg.duration > 0 {
        k.start_traffic();
        k.event_loop();
    }
    Ok(SimOutput {
        metrics: k.metrics,
        trace: k.trace,
        topology: k.topo,
        nav_violations: k.nav_violations,
        final_queues: k.nodes.iter().map(Node::queued).collect(),
    })
}

impl Kernel<'_> {
    fn schedule(&mut self, at: Micros, ev: Event) {
        self.seq += 1;
        self.events.insert((at, ev.class(), self.seq), ev);
    }

    fn with_node(&mut self, i: usize, f: impl FnOnce(&mut Node, &mut Ctx<'_>)) {
        let mut out = Vec::new();
        {
            let mut ctx = Ctx {
                now: self.now,
                cfg: &self.mac,
                routes: &self.topo.routes,
                rng: &mut self.rng_backoff,
                metrics: &mut self.metrics,
                out: &mut out,
            };
            f(&mut self.nodes[i], &mut ctx);
        }
        self.pending.extend(out.into_iter().map(|a| (i, a)));
        self.drain();
    }

    fn drain(&mut self) {
        if self.draining {
            return;
        }
        self.draining = true;
        while let Some((i, a)) = self.pending.pop_front() {
            match a {
                Action::Transmit { frame, meta } => self.start_tx(i, frame, meta),
                Action::Timer { slot, at, gen } => self.schedule(at, Event::Timer { node: i, slot, gen }),
                Action::ExpectSuperposed(e) => self.expect[i] = e,
                Action::LeftOrigin(info) => {
                    if self.cfg.traffic == TrafficModel::Backlogged {
                        self.generate(info.origin, info.destination);
                    }
                }
            }
        }
        self.draining = false;
    }

    fn start_traffic(&mut self) {
        match self.cfg.traffic {
            TrafficModel::Backlogged => {
                for d in 0..self.directions.len() {
                    let (a, b) = self.directions[d];
                    self.generate(a, b);
                    self.generate(a, b);
                }
            }
            TrafficModel::Poisson { .. } => {
                for flow in 0..self.directions.len() {
                    let at = self.next_arrival();
                    self.schedule(at, Event::Generate { flow });
                }
            }
        }
    }

    fn next_arrival(&mut self) -> Micros {
        let TrafficModel::Poisson { rate_pps } = self.cfg.traffic else {
            return Micros::MAX;
        };
        let u: f64 = self.rng_traffic.gen();
        let gap_s = -libm::log1p(-u) / rate_pps;
        self.now + libm::ceil(gap_s * MICROS_PER_SEC as f64) as Micros
    }

    fn generate(&mut self, origin: NodeId, destination: NodeId) {
        self.next_packet += 1;
        let info = PacketInfo {
            id: PacketId(self.next_packet),
            origin,
            destination,
            len_bytes: self.cfg.payload_bytes,
            created_at: self.now,
        };
        self.metrics.generated(&info);
        self.with_node(origin.index(), |node, ctx| {
            node.enqueue_local(info, ctx);
        });
    }

    fn event_loop(&mut self) {
        while let Some((&(at, _, _), _)) = self.events.first_key_value() {
            if at > self.cfg.duration {
                break;
            }
            let (_, ev) = self.events.pop_first().expect("non-empty");
            self.now = at;
            match ev {
                Event::TxEnd(id) => self.end_tx(id),
                Event::Generate { flow } => {
                    let (a, b) = self.directions[flow];
                    self.generate(a, b);
                    let next = self.next_arrival();
                    self.schedule(next, Event::Generate { flow });
                }
                Event::Timer { node, slot, gen } => {
                    self.with_node(node, |n, ctx| n.on_timer(slot, gen, ctx));
                }
            }
        }
    }

    fn start_tx(&mut self, i: usize, frame: Frame, meta: TxMeta) {
        let t = &self.cfg.timing;
        let now = self.now;
        let opens = matches!(frame.kind(), FrameKind::Rts | FrameKind::RtsPnc | FrameKind::CncRts);
        if self.cfg.audit && opens && self.nodes[i].nav_until() > now {
            self.nav_violations += 1;
        }
        let end = now + frame_airtime(&frame, t);
        let nav_end = now + frame.nav_reference_offset(t) + frame.duration();
        let id = self.next_tx;
        self.next_tx += 1;
        let trace_idx = self.cfg.trace.then(|| {
            self.trace.push(TraceRecord {
                start: now,
                end,
                node: NodeId(i as u16),
                frame: frame.clone(),
                nav_until: nav_end,
                outcomes: Vec::new(),
            });
            self.trace.len() - 1
        });
        // Half duplex: whatever we were receiving is lost.
        self.locks[i] = None;
        self.active[i] = Some(id);
        let node = NodeId(i as u16);
        for j in 0..self.nodes.len() {
            if j == i || self.active[j].is_some() {
                continue;
            }
            match self.locks[j] {
                None if self.power[i][j] >= self.lock_threshold_w => {
                    self.locks[j] = Some(Lock { tx: id, merged: None });
                }
                Some(Lock { tx, merged: None }) => {
                    if let Some((a, b)) = self.expect[j] {
                        // Both header windows must stay clear of the partner
                        // signal; anything else is plain interference.
                        let t = &self.cfg.timing;
                        let fits = |r: &TxRec| {
                            r.node == a
                                && matches!(r.frame, Frame::Data(_))
                                && matches!(frame, Frame::Data(_))
                                && r.start + r.frame.header_airtime(t) <= now
                                && end - frame.header_airtime(t) >= r.end
                        };
                        if b == node && self.txs.get(&tx).is_some_and(fits) {
                            self.locks[j] = Some(Lock { tx, merged: Some(id) });
                        }
                    }
                }
                _ => {}
            }
        }
        self.txs.insert(
            id,
            TxRec {
                node,
                start: now,
                end,
                frame,
                meta,
                nav_end,
                trace_idx,
            },
        );
        self.schedule(end, Event::TxEnd(id));
        self.update_busy();
    }

    fn end_tx(&mut self, id: u64) {
        let (node, frame) = {
            let r = &self.txs[&id];
            (r.node, r.frame.clone())
        };
        self.active[node.index()] = None;
        self.with_node(node.index(), |n, ctx| n.on_tx_end(&frame, ctx));
        for j in 0..self.nodes.len() {
            let Some(lock) = self.locks[j] else { continue };
            match lock.merged {
                Some(b) if b == id => {
                    self.locks[j] = None;
                    self.resolve_superposed(j, lock.tx, b);
                }
                Some(_) if lock.tx == id => {}
                None if lock.tx == id => {
                    self.locks[j] = None;
                    self.resolve(j, id);
                }
                _ => {}
            }
        }
        self.update_busy();
        self.prune();
    }

    fn spans_at(&self, j: usize, start: Micros, end: Micros) -> Vec<Span> {
        self.txs
            .values()
            .filter(|r| r.start < end && r.end > start && r.node.index() != j)
            .map(|r| Span {
                node: r.node,
                start: r.start,
                end: r.end,
                power_w: self.power[r.node.index()][j],
            })
            .collect()
    }

    fn resolve(&mut self, j: usize, id: u64) {
        let t = &self.cfg.timing;
        let phy = &self.cfg.phy;
        let r = &self.txs[&id];
        let signal = self.power[r.node.index()][j];
        let spans = self.spans_at(j, r.start, r.end);
        let segs = interference_segments(r.start, r.end, &[r.node], &spans);
        let h = r.frame.header_airtime(t).min(r.end - r.start);
        let (hw, body) = if r.frame.is_bit_reversed() {
            ((r.end - h, r.end), (r.start, r.end - h))
        } else {
            ((r.start, r.start + h), (r.start + h, r.end))
        };
        let profile = &r.meta.relay_profile;
        let cuts: Vec<Micros> = profile.iter().flat_map(|p| [r.start + p.start, r.start + p.end]).collect();
        let start = r.start;
        let chip = |at: Micros, i: f64| {
            let own = phy.chip_ber(signal, i);
            let off = at - start;
            match profile.iter().find(|p| p.start <= off && off < p.end) {
                Some(p) => compose_chip_errors(p.chip_ber, own),
                None => own,
            }
        };
        let hdr_bits = bit_segments(hw.0, hw.1, &segs, &cuts, t.bit_rate, chip);
        let body_bits = if body.1 > body.0 {
            bit_segments(body.0, body.1, &segs, &cuts, t.bit_rate, chip)
        } else {
            Vec::new()
        };
        let header_ok = draw(&hdr_bits, &mut self.rng_rx);
        let body_ok = draw(&body_bits, &mut self.rng_rx) && header_ok;
        self.note(id, j, header_ok, body_ok);
        let r = &self.txs[&id];
        let (frame, meta) = (r.frame.clone(), r.meta.clone());
        let rx_from = r.node;
        let (rs, re, nav_end) = (r.start, r.end, r.nav_end);
        self.with_node(j, |n, ctx| {
            let rx = Reception {
                from: rx_from,
                frame: &frame,
                meta: &meta,
                start: rs,
                end: re,
                nav_end,
                header_ok,
                body_ok,
            };
            n.on_frame(&rx, ctx);
        });
    }

    fn note(&mut self, id: u64, j: usize, header_ok: bool, body_ok: bool) {
        let r = &self.txs[&id];
        if let Some(idx) = r.trace_idx {
            let me = NodeId(j as u16);
            if r.frame.addressees().contains(&me) {
                self.trace[idx].outcomes.push(RxNote {
                    node: me,
                    header_ok,
                    body_ok,
                });
            }
        }
    }

    /// Relay `j` received source frames `a` and `b` on top of each other.
    fn resolve_superposed(&mut self, j: usize, a: u64, b: u64) {
        let t = &self.cfg.timing;
        let phy = &self.cfg.phy;
        let (ra, rb) = (&self.txs[&a], &self.txs[&b]);
        let (pa, pb) = (self.power[ra.node.index()][j], self.power[rb.node.index()][j]);
        let (start, end) = (ra.start.min(rb.start), ra.end.max(rb.end));
        let spans = self.spans_at(j, start, end);
        let segs = interference_segments(start, end, &[ra.node, rb.node], &spans);
        let ha = ra.frame.header_airtime(t);
        let hb = rb.frame.header_airtime(t);
        let a_hw = (ra.start, ra.start + ha);
        let b_hw = (rb.end - hb, rb.end);
        debug_assert!(
            a_hw.1 <= rb.start && b_hw.0 >= ra.end,
            "partner signal overlaps a header window"
        );
        let active = |r: &TxRec, at: Micros| r.start <= at && at < r.end;
        let cuts = [ra.start, ra.end, rb.start, rb.end];
        let hdr_a = bit_segments(a_hw.0, a_hw.1, &segs, &cuts, t.bit_rate, |at, i| {
            let extra = if active(rb, at) { pb } else { 0.0 };
            phy.chip_ber(pa, i + extra)
        });
        let hdr_b = bit_segments(b_hw.0, b_hw.1, &segs, &cuts, t.bit_rate, |at, i| {
            let extra = if active(ra, at) { pa } else { 0.0 };
            phy.chip_ber(pb, i + extra)
        });
        // The forward's payload follows the header; its offset o maps to
        // time rb.start + (o - header) of the second source's frame.
        let fwd_hdr = t.t_data_hdr();
        let payload_end = rb.end - hb;
        let mut pcuts = vec![rb.start, payload_end, ra.end];
        pcuts.extend(segs.iter().flat_map(|s| [s.start, s.end]));
        pcuts.retain(|&x| x >= rb.start && x <= payload_end);
        pcuts.sort_unstable();
        pcuts.dedup();
        let profile: Vec<ProfileSegment> = pcuts
            .windows(2)
            .map(|w| {
                let i = interference_at(&segs, w[0]);
                let chip = if active(ra, w[0]) {
                    phy.chip_ber_dnf(pa, pb, i)
                } else {
                    phy.chip_ber(pb, i)
                };
                ProfileSegment {
                    start: w[0] - rb.start + fwd_hdr,
                    end: w[1] - rb.start + fwd_hdr,
                    chip_ber: chip,
                }
            })
            .collect();
        let ok_a = draw(&hdr_a, &mut self.rng_rx);
        let ok_b = draw(&hdr_b, &mut self.rng_rx);
        self.note(a, j, ok_a, ok_a);
        self.note(b, j, ok_b, ok_b);
        let (ra, rb) = (&self.txs[&a], &self.txs[&b]);
        let fa = (ra.node, ra.frame.clone(), ra.meta.clone(), ra.start, ra.end, ra.nav_end);
        let fb = (rb.node, rb.frame.clone(), rb.meta.clone(), rb.start, rb.end, rb.nav_end);
        self.with_node(j, |n, ctx| {
            let mk = |f: &(NodeId, Frame, TxMeta, Micros, Micros, Micros), ok: bool| (f.0, f.3, f.4, f.5, ok);
            let (xa, xb) = (mk(&fa, ok_a), mk(&fb, ok_b));
            let first = Reception {
                from: xa.0,
                frame: &fa.1,
                meta: &fa.2,
                start: xa.1,
                end: xa.2,
                nav_end: xa.3,
                header_ok: xa.4,
                body_ok: xa.4,
            };
            let second = Reception {
                from: xb.0,
                frame: &fb.1,
                meta: &fb.2,
                start: xb.1,
                end: xb.2,
                nav_end: xb.3,
                header_ok: xb.4,
                body_ok: xb.4,
            };
            n.on_superposed(&first, &second, profile, ctx);
        });
    }

    fn update_busy(&mut self) {
        for j in 0..self.nodes.len() {
            let total: f64 = self
                .active
                .iter()
                .enumerate()
                .filter(|(i, a)| *i != j && a.is_some())
                .map(|(i, _)| self.power[i][j])
                .sum();
            let busy = cca_busy(total, self.cfg.phy.cca_sensitivity_dbm);
            if busy != self.busy[j] {
                self.busy[j] = busy;
                self.with_node(j, |n, ctx| n.on_medium(busy, ctx));
            }
        }
    }

    /// Forget ended transmissions no pending reception can overlap.
    fn prune(&mut self) {
        let horizon = self
            .locks
            .iter()
            .flatten()
            .filter_map(|l| self.txs.get(&l.tx).map(|r| r.start))
            .chain(self.active.iter().flatten().filter_map(|id| self.txs.get(id).map(|r| r.start)))
            .min()
            .unwrap_or(self.now);
        self.txs.retain(|_, r| r.end > horizon || r.end > self.now);
    }
}
