use pncmac_core::frames::{
    decode, encode, nav_co_pnc, CoPncMode, DataFrame, Frame, PacketInfo, QueueAdvert, TimingParams,
};
use pncmac_core::{NodeId, PacketId};
use proptest::prelude::*;

fn node() -> impl Strategy<Value = NodeId> {
    (1u16..2000).prop_map(NodeId)
}

fn packet(len: u16) -> impl Strategy<Value = PacketInfo> {
    (any::<u64>(), node(), node(), any::<u64>()).prop_map(move |(id, o, d, at)| PacketInfo {
        id: PacketId(id),
        origin: o,
        destination: d,
        len_bytes: len,
        created_at: at,
    })
}

fn data_frame() -> impl Strategy<Value = DataFrame> {
    (44u16..1500, any::<bool>()).prop_flat_map(|(len, two)| {
        let count = if two { 2 } else { 1 };
        (
            (any::<u16>(), node(), node(), proptest::option::of(node()), proptest::option::of(node())),
            (any::<u16>(), 0u16..0x8000, any::<u16>(), any::<[bool; 3]>()),
            proptest::collection::vec(packet(len), count),
            node(),
        )
            .prop_map(move |((dur, tx, rx, second, prev), (tq, off, len_next, bits), packets, rx2)| DataFrame {
                duration: u64::from(dur),
                transmitter: tx,
                receiver: rx,
                receiver2: two.then_some(rx2),
                second_hop: second,
                prev_hop: prev,
                t_q_cur_ms: tq,
                next_offset_ms: off,
                len_next,
                wait_for_pnc: bits[0],
                bit_reversed: bits[1],
                superposed: bits[2],
                packets,
            })
    })
}

fn frame() -> impl Strategy<Value = Frame> {
    let dur = any::<u16>().prop_map(u64::from);
    prop_oneof![
        (dur.clone(), node(), node()).prop_map(|(duration, ra, ta)| Frame::Rts { duration, ra, ta }),
        (dur.clone(), node(), any::<bool>()).prop_map(|(duration, ra, has_packet)| Frame::Cts {
            duration,
            ra,
            has_packet
        }),
        (dur.clone(), node(), node(), node()).prop_map(|(duration, src_a, src_b, relay)| Frame::RtsPnc {
            duration,
            src_a,
            src_b,
            relay
        }),
        (dur.clone(), node(), any::<[bool; 3]>(), 0u16..0x2000).prop_map(|(duration, relay, b, sync_offset)| {
            Frame::CoPnc {
                duration,
                relay,
                a_has_data: b[0],
                b_has_data: b[1],
                clear_wait_flags: b[2],
                sync_offset,
            }
        }),
        data_frame().prop_map(Frame::Data),
        data_frame().prop_map(Frame::CncData),
        (dur.clone(), node(), proptest::option::of((node(), node(), any::<u16>(), any::<u16>()))).prop_map(
            |(duration, ta, adv)| Frame::Ack {
                duration,
                ta,
                advert: adv.map(|(next_hop, second_hop, t, len_next)| QueueAdvert {
                    next_hop,
                    second_hop,
                    t_q_cur_ms: t,
                    t_q_next_offset_ms: 0,
                    len_next,
                }),
            }
        ),
        (dur.clone(), node(), proptest::option::of(node())).prop_map(|(duration, acked, acked2)| Frame::AckPnc {
            duration,
            acked,
            acked2
        }),
        (dur, node(), proptest::collection::vec(node(), 1..5)).prop_map(|(duration, ta, destinations)| {
            Frame::CncRts { duration, ta, destinations }
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn decode_inverts_encode(f in frame()) {
        let bytes = encode(&f).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap(), f);
    }

    #[test]
    fn single_bit_flip_is_caught(f in frame(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut bytes = encode(&f).unwrap();
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        prop_assert!(decode(&bytes).is_err());
    }
}

#[test]
fn co_pnc_nav_two_forms_agree() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let s: u64 = rng.gen_range(1..100);
        let c: u64 = rng.gen_range(1..2000);
        let k: u64 = rng.gen_range(1..2000);
        let p: u64 = rng.gen_range(1..2000);
        let x: u64 = 2 * s + c + k + rng.gen_range(1..100_000);
        let expanded = 2 * (x - 2 * s - c - k) + 3 * s + 2 * k + p;
        let compact = 2 * (x - c) - s + p;
        assert_eq!(expanded, compact, "X={x} S={s} C={c} K={k} P={p}");
    }
}

#[test]
fn co_pnc_nav_uses_compact_form() {
    let t = TimingParams::default();
    for nav_b in [9912u64, 10_000, 20_000] {
        let got = nav_co_pnc(CoPncMode::Both, Some(9000), Some(nav_b), &t).unwrap();
        assert_eq!(got, 2 * (nav_b - t.t_co_pnc()) - t.sifs + t.t_ack_pnc());
    }
}
