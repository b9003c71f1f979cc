//! Relay-initiated PNC exchange: RTS-PNC, two CTSs, CO-PNC, superposed
//! source frames, coded forward, two ACKs, ACK-PNC.

use alloc::vec;
use alloc::vec::Vec;

use crate::frames::{
    nav_co_pnc, nav_cts, nav_data, nav_pnc_ack, nav_pnc_forward, nav_rts_pnc, CoPncMode, CtsRole,
    DataFrame, DataRole, Frame,
};
use crate::ids::{Micros, NodeId};
use crate::sim::metrics::PncRecord;

use super::{
    Action, Ctx, Exchange, Node, ProfileSegment, RStage, Reception, RelaySession, SStage, Slot,
    SourceSession, TxMeta,
};

type Pair = ((NodeId, NodeId), (NodeId, NodeId));

impl Node {
    // Relay side.

    pub(super) fn start_pnc(
        &mut self,
        forward: (NodeId, NodeId),
        reverse: (NodeId, NodeId),
        ctx: &mut Ctx<'_>,
    ) {
        let (x, y) = forward;
        let len = |k| self.virt.get(k).map_or(0, |v| v.length);
        // The shorter frame goes first so the longer one covers it.
        let (a, b) = if len(reverse) < len(forward) { (y, x) } else { (x, y) };
        let t = &ctx.cfg.timing;
        let rts = Frame::RtsPnc {
            duration: nav_rts_pnc(t),
            src_a: a,
            src_b: b,
            relay: self.id,
        };
        self.exchange = Some(Exchange::Relay(RelaySession {
            a,
            b,
            stage: RStage::RtsPnc,
            cts: [None, None],
            mode: None,
            nav_co: 0,
            co_end: 0,
            acked: [false, false],
            started: ctx.now,
            queue_before: self.queue.len(),
            packets: Vec::new(),
            pair: (forward, reverse),
        }));
        self.transmit(rts, TxMeta::default(), ctx);
    }

    pub(super) fn relay_on_cts(&mut self, from: NodeId, has_packet: bool, duration: Micros) {
        if let Some(Exchange::Relay(r)) = self.exchange.as_mut() {
            if r.stage != RStage::Decide {
                return;
            }
            if from == r.a {
                r.cts[0] = Some((has_packet, duration));
            } else if from == r.b {
                r.cts[1] = Some((has_packet, duration));
            }
        }
    }

    fn relay(&mut self) -> &mut RelaySession {
        match self.exchange.as_mut() {
            Some(Exchange::Relay(r)) => r,
            _ => unreachable!("relay handler outside a relay exchange"),
        }
    }

    pub(super) fn relay_tx_end(&mut self, frame: &Frame, ctx: &mut Ctx<'_>) {
        let t = &ctx.cfg.timing;
        let now = ctx.now;
        match frame {
            Frame::RtsPnc { .. } => {
                self.relay().stage = RStage::Decide;
                let at = now + 3 * t.sifs + 2 * t.t_cts();
                self.set_timer(Slot::Step, at, ctx);
            }
            Frame::CoPnc { .. } => {
                let r = self.relay();
                r.co_end = now;
                let until = now + r.nav_co;
                self.hold(until);
                self.set_timer(Slot::Deadline, until, ctx);
            }
            Frame::Data(_) => {
                self.relay().stage = RStage::AwaitAcks;
                let at = now + 3 * t.sifs + 2 * t.t_ack();
                self.set_timer(Slot::Step, at, ctx);
            }
            Frame::Ack { .. } => {
                // Single-source mode: the source's frame is now ours to
                // forward as a plain packet.
                ctx.metrics.exchanges.pnc_single += 1;
                self.pnc_failures = None;
                self.exchange_succeeded(ctx);
                self.finish_exchange(ctx);
            }
            Frame::AckPnc { .. } => self.finish_exchange(ctx),
            _ => {}
        }
    }

    pub(super) fn relay_step(&mut self, ctx: &mut Ctx<'_>) {
        match self.relay().stage {
            RStage::Decide => self.relay_decide(ctx),
            RStage::AwaitAcks => self.relay_acks(ctx),
            _ => {}
        }
    }

    fn relay_decide(&mut self, ctx: &mut Ctx<'_>) {
        let t = &ctx.cfg.timing;
        let me = self.id;
        let r = self.relay().clone();
        let mut clear = false;
        for (i, (src, other)) in [(r.a, r.b), (r.b, r.a)].into_iter().enumerate() {
            if let Some((false, _)) = r.cts[i] {
                self.virt.remove((src, other));
                clear = true;
            }
        }
        let has = |i: usize| matches!(r.cts[i], Some((true, _)));
        let mode = match (has(0), has(1)) {
            (true, true) => CoPncMode::Both,
            (true, false) => CoPncMode::AOnly,
            (false, true) => CoPncMode::BOnly,
            (false, false) => {
                if r.cts.iter().all(Option::is_none) {
                    self.relay_failed(ctx);
                } else {
                    self.finish_exchange(ctx);
                }
                return;
            }
        };
        let nav = |i: usize| r.cts[i].filter(|c| c.0).map(|c| c.1);
        let Ok(nav_co) = nav_co_pnc(mode, nav(0), nav(1), t) else {
            self.relay_failed(ctx);
            return;
        };
        let co = Frame::CoPnc {
            duration: nav_co,
            relay: me,
            a_has_data: has(0),
            b_has_data: has(1),
            clear_wait_flags: clear,
            sync_offset: 0,
        };
        let rs = self.relay();
        rs.mode = Some(mode);
        rs.nav_co = nav_co;
        rs.stage = if mode == CoPncMode::Both {
            ctx.out.push(Action::ExpectSuperposed(Some((r.a, r.b))));
            RStage::AwaitSuperposed
        } else {
            RStage::AwaitSingle
        };
        self.transmit(co, TxMeta::default(), ctx);
    }

    /// Both source frames have ended. `profile` gives the chip error the
    /// relay's denoise-and-forward mapping leaves on the forward, indexed by
    /// forward offset.
    pub fn on_superposed(
        &mut self,
        first: &Reception<'_>,
        second: &Reception<'_>,
        profile: Vec<ProfileSegment>,
        ctx: &mut Ctx<'_>,
    ) {
        ctx.out.push(Action::ExpectSuperposed(None));
        let Some(Exchange::Relay(r)) = self.exchange.as_ref() else {
            return;
        };
        if r.stage != RStage::AwaitSuperposed {
            return;
        }
        let (Some(da), Some(db)) = (first.frame.data(), second.frame.data()) else {
            return;
        };
        if !first.header_ok || !second.header_ok {
            // Deadline takes care of the failure.
            return;
        }
        let (a, b) = (r.a, r.b);
        let (da, db) = (da.clone(), db.clone());
        self.virt.remove((a, b));
        self.virt.remove((b, a));
        for (src, d) in [(a, &da), (b, &db)] {
            if let Some(ad) = d.advert().filter(|ad| ad.next_hop == self.id) {
                self.virt.ingest_advert(src, &ad, ctx.now);
            }
        }
        let (pa, pb) = (da.packets[0], db.packets[0]);
        // The forward is a data frame to both sources, so it can renew their
        // wait-for-PNC flags.
        let again = ctx.cfg.options().pnc
            && self.virt.get((a, b)).is_some()
            && self.virt.get((b, a)).is_some();
        let forward = DataFrame {
            duration: nav_pnc_forward(&ctx.cfg.timing),
            transmitter: self.id,
            receiver: a,
            receiver2: Some(b),
            second_hop: None,
            prev_hop: None,
            t_q_cur_ms: 0,
            next_offset_ms: 0,
            len_next: 0,
            wait_for_pnc: again,
            bit_reversed: false,
            superposed: false,
            packets: vec![pa, pb],
        };
        let meta = TxMeta {
            relay_profile: profile,
            pnc_headers: vec![da, db],
        };
        let rs = self.relay();
        rs.stage = RStage::Forward;
        rs.packets = vec![pa.id, pb.id];
        let at = ctx.now + ctx.cfg.timing.sifs;
        self.send_after(at, Frame::Data(forward), meta, ctx);
    }

    fn relay_acks(&mut self, ctx: &mut Ctx<'_>) {
        let r = self.relay().clone();
        // An ACK from one source means it decoded the other's packet.
        let delivered: Vec<NodeId> = [(r.acked[0], r.b), (r.acked[1], r.a)]
            .into_iter()
            .filter_map(|(ok, n)| ok.then_some(n))
            .collect();
        if delivered.is_empty() {
            self.relay_failed(ctx);
            return;
        }
        ctx.metrics.exchanges.pnc += 1;
        ctx.metrics.pnc_records.push(PncRecord {
            relay: self.id,
            start: r.started,
            end: ctx.now + ctx.cfg.timing.t_ack_pnc(),
            relay_queue_before: r.queue_before,
            relay_queue_after: self.queue.len(),
            packets: r.packets.clone(),
        });
        self.pnc_failures = None;
        self.exchange_succeeded(ctx);
        let ack = Frame::AckPnc {
            duration: 0,
            acked: delivered[0],
            acked2: delivered.get(1).copied(),
        };
        self.transmit(ack, TxMeta::default(), ctx);
    }

    pub(super) fn relay_deadline(&mut self, ctx: &mut Ctx<'_>) {
        let stage = self.relay().stage;
        if stage == RStage::AwaitSuperposed {
            ctx.out.push(Action::ExpectSuperposed(None));
        }
        self.relay_failed(ctx);
    }

    fn relay_failed(&mut self, ctx: &mut Ctx<'_>) {
        let pair: Pair = self.relay().pair;
        ctx.metrics.exchanges.pnc_failed += 1;
        let count = match self.pnc_failures {
            Some((p, n)) if p == pair => n + 1,
            _ => 1,
        };
        if count >= ctx.cfg.params.retry_limit {
            self.virt.remove(pair.0);
            self.virt.remove(pair.1);
            self.pnc_failures = None;
            self.cw = ctx.cfg.params.cw_min;
        } else {
            self.pnc_failures = Some((pair, count));
            self.exchange_failed(ctx);
        }
        self.finish_exchange(ctx);
    }

    // Source side.

    pub(super) fn on_rts_pnc(
        &mut self,
        relay: NodeId,
        partner: NodeId,
        role: CtsRole,
        ctx: &mut Ctx<'_>,
    ) {
        let t = ctx.cfg.timing.clone();
        let now = ctx.now;
        self.flags.rearm(relay, now, t.pnc_wait_timeout);
        self.arm_flag_timer(ctx);
        if !self.may_respond(now) {
            return;
        }
        let at = match role {
            CtsRole::B => now + 2 * t.sifs + t.t_cts(),
            _ => now + t.sifs,
        };
        let packet = self.queue.first_with_key((relay, partner)).map(|p| p.info);
        let cts = match packet {
            None => Frame::Cts {
                duration: 0,
                ra: relay,
                has_packet: false,
            },
            Some(info) => {
                let air = t.t_data(u64::from(info.len_bytes));
                let co_end = now + 3 * t.sifs + 2 * t.t_cts() + t.t_co_pnc();
                self.exchange = Some(Exchange::Source(SourceSession {
                    relay,
                    partner,
                    role,
                    packet: info.id,
                    stage: SStage::AwaitCo,
                    both: false,
                    got_ack: false,
                }));
                self.set_timer(Slot::Deadline, co_end + t.sifs, ctx);
                Frame::Cts {
                    duration: nav_cts(role, air, &t),
                    ra: relay,
                    has_packet: true,
                }
            }
        };
        self.reevaluate(ctx);
        self.send_after(at, cts, TxMeta::default(), ctx);
    }

    fn source(&mut self) -> &mut SourceSession {
        match self.exchange.as_mut() {
            Some(Exchange::Source(s)) => s,
            _ => unreachable!("source handler outside a source exchange"),
        }
    }

    pub(super) fn on_co_pnc(&mut self, rx: &Reception<'_>, ctx: &mut Ctx<'_>) {
        let Frame::CoPnc {
            duration,
            relay,
            a_has_data,
            b_has_data,
            clear_wait_flags,
            ..
        } = *rx.frame
        else {
            return;
        };
        let s = match self.exchange.as_ref() {
            Some(Exchange::Source(s)) if s.relay == relay && s.stage == SStage::AwaitCo => s.clone(),
            _ => return,
        };
        if clear_wait_flags {
            self.flags.clear((relay, s.partner));
            self.arm_flag_timer(ctx);
        }
        let mine = match s.role {
            CtsRole::A => a_has_data,
            _ => b_has_data,
        };
        if !mine {
            self.exchange = None;
            self.cancel(Slot::Deadline);
            self.set_nav(rx.nav_end, ctx);
            self.reevaluate(ctx);
            return;
        }
        let Some(p) = self.queue.get(s.packet) else {
            self.finish_exchange(ctx);
            return;
        };
        let t = &ctx.cfg.timing;
        let both = a_has_data && b_has_data;
        let data_air = t.t_data(u64::from(p.info.len_bytes));
        let role = match (both, s.role) {
            (false, _) => DataRole::Single,
            (true, CtsRole::A) => DataRole::A,
            (true, _) => DataRole::B,
        };
        let nav = nav_data(role, duration, data_air, t).unwrap_or(0);
        let mut data = self.data_frame_for(p, nav, ctx);
        data.wait_for_pnc = false;
        data.superposed = both;
        data.bit_reversed = both && role == DataRole::B;
        let now = ctx.now;
        let at = match s.role {
            CtsRole::A => now + t.sifs,
            _ => now + 2 * t.sifs + t.t_data_hdr(),
        };
        let deadline = now + duration;
        let src = self.source();
        src.stage = SStage::Data;
        src.both = both;
        self.set_timer(Slot::Deadline, deadline, ctx);
        self.send_after(at, Frame::Data(data), TxMeta::default(), ctx);
    }

    pub(super) fn source_tx_end(&mut self, frame: &Frame, ctx: &mut Ctx<'_>) {
        let t = &ctx.cfg.timing;
        let now = ctx.now;
        let (ack_at, both) = (now + 2 * t.sifs + t.t_ack(), self.source().both);
        match frame {
            Frame::Data(_) if both => self.source().stage = SStage::AwaitForward,
            Frame::Data(_) => {
                self.source().stage = SStage::AwaitAck;
                self.cancel(Slot::Deadline);
                self.set_timer(Slot::Step, ack_at, ctx);
            }
            Frame::Ack { .. } => self.source().stage = SStage::AwaitAckPnc,
            _ => {}
        }
    }

    /// The relay's coded forward reached us.
    pub(super) fn on_pnc_forward(&mut self, rx: &Reception<'_>, d: &DataFrame, ctx: &mut Ctx<'_>) {
        let s = match self.exchange.as_ref() {
            Some(Exchange::Source(s)) if s.relay == rx.from && s.stage == SStage::AwaitForward => {
                s.clone()
            }
            _ => return,
        };
        self.source().stage = SStage::AwaitAckPnc;
        let Some(other) = d.packets.iter().find(|p| p.id != s.packet).copied() else {
            return;
        };
        let partner_hdr = rx.meta.pnc_headers.iter().find(|h| h.transmitter != self.id);
        let t_q_prev = partner_hdr.map_or(0, |h| Micros::from(h.t_q_cur_ms) * 1000);
        let key = (s.relay, s.partner);
        if d.wait_for_pnc && self.queue.first_with_key(key).is_some() {
            self.flags.set(key, ctx.now, ctx.cfg.timing.pnc_wait_timeout);
            self.arm_flag_timer(ctx);
        }
        if partner_hdr.is_some_and(|h| h.len_next == 0) {
            self.flags.clear((s.relay, s.partner));
            self.arm_flag_timer(ctx);
        }
        let advert = self.accept_packet(other, s.relay, t_q_prev, ctx);
        let t = &ctx.cfg.timing;
        let first = s.role == CtsRole::A;
        let at = if first {
            ctx.now + t.sifs
        } else {
            ctx.now + 2 * t.sifs + t.t_ack()
        };
        let ack = Frame::Ack {
            duration: nav_pnc_ack(first, t),
            ta: self.id,
            advert,
        };
        self.send_after(at, ack, TxMeta::default(), ctx);
    }

    pub(super) fn on_ack_pnc(
        &mut self,
        from: NodeId,
        acked: NodeId,
        acked2: Option<NodeId>,
        ctx: &mut Ctx<'_>,
    ) {
        let s = match self.exchange.as_ref() {
            Some(Exchange::Source(s))
                if s.relay == from
                    && matches!(s.stage, SStage::AwaitAckPnc | SStage::AwaitForward) =>
            {
                s.clone()
            }
            _ => return,
        };
        if acked == self.id || acked2 == Some(self.id) {
            self.exchange_succeeded(ctx);
            self.packet_succeeded(s.packet, ctx);
        } else {
            self.exchange_failed(ctx);
            self.packet_failed(s.packet, ctx);
        }
        self.finish_exchange(ctx);
    }

    pub(super) fn source_step(&mut self, ctx: &mut Ctx<'_>) {
        let s = self.source().clone();
        if s.stage != SStage::AwaitAck {
            return;
        }
        if s.got_ack {
            self.exchange_succeeded(ctx);
            self.packet_succeeded(s.packet, ctx);
        } else {
            self.exchange_failed(ctx);
            self.packet_failed(s.packet, ctx);
        }
        self.finish_exchange(ctx);
    }

    pub(super) fn source_deadline(&mut self, ctx: &mut Ctx<'_>) {
        let s = self.source().clone();
        if s.stage != SStage::AwaitCo {
            self.exchange_failed(ctx);
            self.packet_failed(s.packet, ctx);
        }
        self.finish_exchange(ctx);
    }
}
