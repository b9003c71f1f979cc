use pncmac_core::frames::PacketInfo;
use pncmac_core::queueing::{
    select_action, ActualQueue, QueuedPacket, SelectOptions, TxAction, VirtualPacket, VirtualQueue, WaitFlags,
};
use pncmac_core::{Micros, NodeId, PacketId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: Micros = 100_000;

struct State {
    actual: ActualQueue,
    packets: Vec<QueuedPacket>,
    virt: VirtualQueue,
    virt_entries: Vec<VirtualPacket>,
    flags: WaitFlags,
    deadlines: Vec<((NodeId, NodeId), Micros)>,
    now: Micros,
}

fn random_state(rng: &mut ChaCha8Rng) -> State {
    let now = 50 * STEP;
    let mut times: Vec<Micros> = (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..=50) * STEP).collect();
    times.sort_unstable();
    let mut actual = ActualQueue::new(50);
    let mut packets = Vec::new();
    for (i, at) in times.into_iter().enumerate() {
        let next = NodeId(rng.gen_range(1..=4));
        let prev = rng.gen_bool(0.7).then(|| NodeId(rng.gen_range(1..=4)));
        let second = rng.gen_bool(0.8).then(|| NodeId(rng.gen_range(1..=4))).filter(|&s| s != next);
        let p = QueuedPacket {
            info: PacketInfo {
                id: PacketId(i as u64),
                origin: prev.unwrap_or(NodeId(0)),
                destination: second.unwrap_or(next),
                len_bytes: 1000,
                created_at: at,
            },
            prev_hop: prev,
            next_hop: next,
            second_hop: second,
            enqueued_at: at,
            t_q_prev: if prev.is_some() { rng.gen_range(0..=30) * STEP } else { 0 },
            retries: 0,
            cnc_partial: rng.gen_bool(0.1),
        };
        assert!(actual.enqueue(p.clone()));
        packets.push(p);
    }
    let mut virt = VirtualQueue::new(50);
    for _ in 0..rng.gen_range(0..=6) {
        let a = NodeId(rng.gen_range(1..=4));
        let b = NodeId(rng.gen_range(1..=4));
        if a != b {
            virt.upsert(VirtualPacket {
                prev_hop: a,
                next_hop: b,
                length: 1000,
                prev_enqueued_at: rng.gen_range(0..=50) * STEP,
            });
        }
    }
    let mut flags = WaitFlags::default();
    let mut deadlines = Vec::new();
    for p in &packets {
        if let Some(key) = p.key() {
            if rng.gen_bool(0.3) && !deadlines.iter().any(|(k, _)| *k == key) {
                let d = rng.gen_range(0..=100) * STEP;
                flags.set(key, 0, d);
                deadlines.push((key, d));
            }
        }
    }
    State {
        actual,
        packets,
        virt_entries: virt.entries().to_vec(),
        virt,
        flags,
        deadlines,
        now,
    }
}

/// Rules 4 and 5 written directly from their wording.
fn oracle(s: &State, opts: SelectOptions) -> TxAction {
    let now = s.now;
    let waits = |p: &QueuedPacket| {
        p.key()
            .and_then(|k| s.deadlines.iter().find(|(key, _)| *key == k))
            .is_some_and(|&(_, d)| d > now)
    };
    // Rule 4: the first packet not waiting for a PNC request.
    let p = s.packets.iter().find(|p| !waits(p));
    if opts.pnc {
        // Rule 5: the front-most virtual packet meeting both conditions.
        let age = |v: &VirtualPacket| now - v.prev_enqueued_at;
        let mut order: Vec<&VirtualPacket> = s.virt_entries.iter().collect();
        order.sort_by_key(|v| std::cmp::Reverse(age(v)));
        for v in order {
            let cond1 = p.is_none_or(|p| age(v) >= (now - p.enqueued_at) + p.t_q_prev);
            if !cond1 {
                continue;
            }
            let reverse = s
                .virt_entries
                .iter()
                .find(|w| w.prev_hop == v.next_hop && w.next_hop == v.prev_hop);
            if let Some(w) = reverse {
                return TxAction::Pnc {
                    forward: (v.prev_hop, v.next_hop),
                    reverse: (w.prev_hop, w.next_hop),
                };
            }
        }
    }
    let Some(p) = p else { return TxAction::None };
    if opts.cnc && !p.cnc_partial {
        if let Some(prev) = p.prev_hop {
            let partner = s.packets.iter().find(|q| {
                q.info.id != p.info.id
                    && !q.cnc_partial
                    && !waits(q)
                    && q.prev_hop == Some(p.next_hop)
                    && q.next_hop == prev
            });
            if let Some(q) = partner {
                return TxAction::Cnc {
                    packet: p.info.id,
                    partner: q.info.id,
                };
            }
        }
    }
    TxAction::Unicast(p.info.id)
}

#[test]
fn selector_matches_rule_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut kinds = [0usize; 4];
    for case in 0..10_000 {
        let s = random_state(&mut rng);
        for opts in [
            SelectOptions { pnc: true, cnc: true },
            SelectOptions { pnc: false, cnc: true },
            SelectOptions { pnc: false, cnc: false },
        ] {
            let got = select_action(&s.actual, &s.virt, &s.flags, s.now, opts);
            assert_eq!(got, oracle(&s, opts), "case {case}, {opts:?}");
            if opts.pnc {
                kinds[match got {
                    TxAction::None => 0,
                    TxAction::Unicast(_) => 1,
                    TxAction::Cnc { .. } => 2,
                    TxAction::Pnc { .. } => 3,
                }] += 1;
            }
        }
    }
    // Every branch is exercised.
    assert!(kinds.iter().all(|&k| k > 100), "{kinds:?}");
}

#[test]
fn fifo_without_virtual_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let mut s = random_state(&mut rng);
        s.virt = VirtualQueue::new(50);
        s.flags = WaitFlags::default();
        let got = select_action(&s.actual, &s.virt, &s.flags, s.now, SelectOptions { pnc: true, cnc: false });
        match s.packets.first() {
            Some(p) => assert_eq!(got, TxAction::Unicast(p.info.id)),
            None => assert_eq!(got, TxAction::None),
        }
    }
}

#[test]
fn rule_five_threshold_examples() {
    let (a, b, r) = (NodeId(1), NodeId(2), NodeId(0));
    let sec = 1_000_000;
    let now = 10 * sec;
    let mut actual = ActualQueue::new(50);
    actual.enqueue(QueuedPacket {
        info: PacketInfo {
            id: PacketId(7),
            origin: r,
            destination: NodeId(3),
            len_bytes: 1000,
            created_at: now - 3 * sec,
        },
        prev_hop: None,
        next_hop: NodeId(3),
        second_hop: None,
        enqueued_at: now - 3 * sec,
        t_q_prev: 0,
        retries: 0,
        cnc_partial: false,
    });
    let opts = SelectOptions { pnc: true, cnc: true };
    for (front_age, expect_pnc) in [(5 * sec, true), (2 * sec, false)] {
        let mut virt = VirtualQueue::new(50);
        for (p, n) in [(a, b), (b, a)] {
            virt.upsert(VirtualPacket {
                prev_hop: p,
                next_hop: n,
                length: 1000,
                prev_enqueued_at: now - front_age,
            });
        }
        let got = select_action(&actual, &virt, &WaitFlags::default(), now, opts);
        assert_eq!(matches!(got, TxAction::Pnc { .. }), expect_pnc, "{got:?}");
    }
}
