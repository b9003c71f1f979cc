//! Two-way XOR coding at a relay, sent as a reliable broadcast: CNC-RTS to
//! both destinations, one CTS each, the coded frame, one ACK each.

use alloc::vec;
use alloc::vec::Vec;

use crate::frames::{nav_cnc_ack, nav_cnc_cts, nav_cnc_data, nav_cnc_rts, DataFrame, Frame};
use crate::ids::{Micros, NodeId, PacketId};

use super::{CStage, CncSession, Ctx, Exchange, Node, Slot, TxMeta};

/// Bytewise XOR of two payloads, the shorter one zero-padded.
pub fn xor_code(a: &[u8], b: &[u8]) -> Vec<u8> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0) ^ b.get(i).copied().unwrap_or(0))
        .collect()
}

impl Node {
    pub(super) fn start_cnc(&mut self, packet: PacketId, partner: PacketId, ctx: &mut Ctx<'_>) {
        let (Some(p), Some(q)) = (self.queue.get(packet), self.queue.get(partner)) else {
            return self.reevaluate(ctx);
        };
        let t = &ctx.cfg.timing;
        let len = p.info.len_bytes.max(q.info.len_bytes);
        let dests = [p.next_hop, q.next_hop];
        let rts = Frame::CncRts {
            duration: nav_cnc_rts(2, t.t_data(u64::from(len)), t),
            ta: self.id,
            destinations: dests.to_vec(),
        };
        self.exchange = Some(Exchange::CncRelay(CncSession {
            packets: [packet, partner],
            dests,
            stage: CStage::Rts,
            cts: [false; 2],
            acked: [false; 2],
        }));
        self.transmit(rts, TxMeta::default(), ctx);
    }

    pub(super) fn on_cnc_rts(
        &mut self,
        from: NodeId,
        dests: &[NodeId],
        index: usize,
        duration: Micros,
        ctx: &mut Ctx<'_>,
    ) {
        if !self.may_respond(ctx.now) || dests.len() != 2 {
            return;
        }
        let t = &ctx.cfg.timing;
        let i = index as u64;
        let at = ctx.now + t.sifs + i * (t.sifs + t.t_cts());
        let cts = Frame::Cts {
            duration: nav_cnc_cts(duration, index, t),
            ra: from,
            has_packet: false,
        };
        let until = ctx.now + duration;
        self.exchange = Some(Exchange::CncDest {
            relay: from,
            other: dests[1 - index],
        });
        self.hold(until);
        self.set_timer(Slot::Deadline, until, ctx);
        self.reevaluate(ctx);
        self.send_after(at, cts, TxMeta::default(), ctx);
    }

    pub(super) fn on_cnc_data(&mut self, from: NodeId, d: &DataFrame, ctx: &mut Ctx<'_>) {
        if self.transmitting || d.packets.len() != 2 {
            return;
        }
        let index = usize::from(d.receiver != self.id);
        // The other native packet is the one we sent the relay earlier, so
        // the XOR always resolves.
        let info = d.packets[index];
        let other = if index == 0 { d.receiver2 } else { Some(d.receiver) };
        if let Some(other) = other.filter(|_| d.wait_for_pnc) {
            let key = (from, other);
            if self.queue.first_with_key(key).is_some() {
                self.flags.set(key, ctx.now, ctx.cfg.timing.pnc_wait_timeout);
                self.arm_flag_timer(ctx);
            }
        }
        let t_q_prev = Micros::from(d.t_q_cur_ms) * 1000;
        let advert = self.accept_packet(info, from, t_q_prev, ctx);
        let t = &ctx.cfg.timing;
        let i = index as u64;
        let at = ctx.now + t.sifs + i * (t.sifs + t.t_ack());
        let ack = Frame::Ack {
            duration: nav_cnc_ack(2, index, t),
            ta: self.id,
            advert,
        };
        self.send_after(at, ack, TxMeta::default(), ctx);
    }

    pub(super) fn cnc_step(&mut self, ctx: &mut Ctx<'_>) {
        let Some(Exchange::CncRelay(c)) = self.exchange.clone() else {
            return;
        };
        match c.stage {
            CStage::Rts => match c.cts {
                [true, true] => self.cnc_send_coded(&c, ctx),
                [true, false] => self.unicast_data_now(c.packets[0], ctx),
                [false, true] => self.unicast_data_now(c.packets[1], ctx),
                [false, false] => {
                    self.exchange_failed(ctx);
                    self.packet_failed(c.packets[0], ctx);
                    self.packet_failed(c.packets[1], ctx);
                    self.finish_exchange(ctx);
                }
            },
            CStage::Data => {
                match c.acked {
                    [true, true] => {
                        ctx.metrics.exchanges.cnc += 1;
                        self.exchange_succeeded(ctx);
                        self.packet_succeeded(c.packets[0], ctx);
                        self.packet_succeeded(c.packets[1], ctx);
                    }
                    [false, false] => {
                        self.exchange_failed(ctx);
                        self.packet_failed(c.packets[0], ctx);
                        self.packet_failed(c.packets[1], ctx);
                    }
                    [a0, _] => {
                        ctx.metrics.exchanges.cnc_partial += 1;
                        let (done, left) = if a0 {
                            (c.packets[0], c.packets[1])
                        } else {
                            (c.packets[1], c.packets[0])
                        };
                        self.packet_succeeded(done, ctx);
                        if let Some(p) = self.queue.get_mut(left) {
                            p.cnc_partial = true;
                        }
                        self.exchange_failed(ctx);
                        self.packet_failed(left, ctx);
                    }
                }
                self.finish_exchange(ctx);
            }
        }
    }

    fn cnc_send_coded(&mut self, c: &CncSession, ctx: &mut Ctx<'_>) {
        let (Some(p), Some(q)) = (self.queue.get(c.packets[0]), self.queue.get(c.packets[1])) else {
            return self.finish_exchange(ctx);
        };
        let mut d = self.data_frame_for(p, nav_cnc_data(2, &ctx.cfg.timing), ctx);
        d.receiver2 = Some(c.dests[1]);
        // Queue state travels only in unicast headers.
        d.second_hop = None;
        d.len_next = 0;
        d.next_offset_ms = 0;
        let [y, x] = c.dests;
        d.wait_for_pnc = ctx.cfg.options().pnc
            && self.virt.get((y, x)).is_some()
            && self.virt.get((x, y)).is_some();
        d.packets = vec![p.info, q.info];
        if let Some(Exchange::CncRelay(s)) = self.exchange.as_mut() {
            s.stage = CStage::Data;
        }
        self.transmit(Frame::CncData(d), TxMeta::default(), ctx);
    }
}
