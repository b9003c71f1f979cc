use std::collections::BTreeSet;

use pncmac_core::frames::{Frame, FrameKind, TimingParams};
use pncmac_core::queueing::SelectOptions;
use pncmac_core::sim::{TopologySpec, TraceRecord};
use pncmac_core::{run, Micros, PacketId, Protocol, SimConfig, SimOutput, TrafficModel};

const ALL: [Protocol; 3] = [Protocol::Pnc, Protocol::Cnc, Protocol::Dot11];

fn cfg(protocol: Protocol, topology: TopologySpec, secs: u64, seed: u64) -> SimConfig {
    let mut c = SimConfig::new(protocol, topology);
    c.duration = secs * 1_000_000;
    c.seed = seed;
    c
}

fn random(placement: u64) -> TopologySpec {
    TopologySpec::Random { nodes: 40, area_m: 1000.0, flows: 10, placement_seed: Some(placement) }
}

fn poisson(mut c: SimConfig, rate: f64) -> SimConfig {
    c.traffic = TrafficModel::Poisson { rate_pps: rate };
    c
}

fn audited(mut c: SimConfig) -> SimOutput {
    c.audit = true;
    run(&c).unwrap()
}

fn scenarios() -> Vec<SimConfig> {
    let mut v = Vec::new();
    for p in ALL {
        v.push(cfg(p, TopologySpec::Wheel { pairs: 1 }, 5, 1));
        v.push(cfg(p, TopologySpec::Wheel { pairs: 4 }, 5, 2));
        v.push(cfg(p, TopologySpec::Line { nodes: 6 }, 5, 3));
        v.push(poisson(cfg(p, random(7), 5, 4), 5.0));
        v.push(poisson(cfg(p, random(8), 5, 5), 15.0));
    }
    v
}

#[test]
fn packets_are_conserved() {
    for c in scenarios() {
        let out = audited(c.clone());
        let m = &out.metrics;
        let queued: BTreeSet<PacketId> = out.final_queues.iter().flatten().map(|p| p.id).collect();
        let accounted: BTreeSet<PacketId> = m
            .delivered_ids()
            .iter()
            .chain(m.dropped_ids())
            .chain(&queued)
            .copied()
            .collect();
        assert!(!m.generated_ids().is_empty());
        assert_eq!(&accounted, m.generated_ids(), "{:?} {:?}", c.protocol, c.topology);
    }
}

#[test]
fn backlogged_sources_hold_one_or_two_own_packets() {
    for p in ALL {
        for (topo, secs) in [(TopologySpec::Wheel { pairs: 3 }, 3), (TopologySpec::Line { nodes: 5 }, 2)] {
            for extra in [0, 137_113, 501_009, 777_777] {
                let mut c = cfg(p, topo.clone(), secs, 9);
                c.duration += extra;
                let out = run(&c).unwrap();
                for &(a, b) in &out.topology.flows {
                    for src in [a, b] {
                        let own = out.final_queues[src.index()].iter().filter(|q| q.origin == src).count();
                        assert!((1..=2).contains(&own), "{p:?} {topo:?} {src}: {own}");
                    }
                }
            }
        }
    }
}

#[test]
fn pnc_packets_bypass_the_relay_queue() {
    let mut seen = 0;
    for c in scenarios().into_iter().filter(|c| c.protocol == Protocol::Pnc) {
        let out = audited(c);
        let m = &out.metrics;
        for r in &m.pnc_records {
            assert_eq!(r.relay_queue_before, r.relay_queue_after, "{r:?}");
            // A later unicast retry of the same packet is a separate
            // delivery attempt and may pass through the queue.
            for p in &r.packets {
                let held = m.enqueue_log.iter().any(|&(n, id, at)| n == r.relay && id == *p && at <= r.end);
                assert!(!held, "{p:?} entered the queue of relay {}", r.relay);
            }
            seen += 1;
        }
    }
    assert!(seen > 100, "{seen}");
}

#[test]
fn nobody_opens_an_exchange_under_nav() {
    for c in scenarios() {
        let out = audited(c.clone());
        assert_eq!(out.nav_violations, 0, "{:?} {:?}", c.protocol, c.topology);
    }
}

#[test]
fn coded_engine_without_coding_is_dot11() {
    let none = Protocol::Coded(SelectOptions { pnc: false, cnc: false });
    for seed in 1..=10 {
        let topo = if seed % 2 == 0 { random(seed) } else { TopologySpec::Line { nodes: 5 } };
        let mut a = poisson(cfg(none, topo.clone(), 3, seed), 8.0);
        a.trace = true;
        let mut b = a.clone();
        b.protocol = Protocol::Dot11;
        let (ta, tb) = (run(&a).unwrap().trace, run(&b).unwrap().trace);
        assert!(!ta.is_empty());
        assert_eq!(ta.len(), tb.len(), "seed {seed}");
        for (x, y) in ta.iter().zip(&tb) {
            assert_eq!(x, y, "seed {seed}");
        }
    }
}

/// Two-source exchanges in an Alice-and-Bob trace that ran to ACK-PNC
/// acknowledging both sources.
fn full_exchanges(trace: &[TraceRecord]) -> Vec<&[TraceRecord]> {
    use FrameKind::*;
    let shape = [RtsPnc, Cts, Cts, CoPnc, Data, Data, Data, Ack, Ack, AckPnc];
    trace
        .windows(shape.len())
        .filter(|w| w.iter().map(|r| r.frame.kind()).eq(shape))
        .filter(|w| matches!(w[9].frame, Frame::AckPnc { acked2: Some(_), .. }))
        .filter(|w| matches!(w[3].frame, Frame::CoPnc { a_has_data: true, b_has_data: true, .. }))
        .collect()
}

fn alice_bob_trace(seed: u64) -> Vec<TraceRecord> {
    let mut c = cfg(Protocol::Pnc, TopologySpec::Wheel { pairs: 1 }, 3, seed);
    c.trace = true;
    run(&c).unwrap().trace
}

#[test]
fn two_source_schedule_gaps() {
    let t = TimingParams::default();
    let stagger = 2 * t.sifs + t.phy_hdr + t.t_mac_hdr();
    let mut n = 0;
    for seed in 1..=3 {
        let trace = alice_bob_trace(seed);
        for w in full_exchanges(&trace) {
            let gap = |i: usize, j: usize| w[j].start - w[i].end;
            // RTS-PNC, CTS A, CTS B, CO-PNC, A's DATA back to back.
            for i in 0..4 {
                assert_eq!(gap(i, i + 1), t.sifs);
            }
            // B starts one header after A.
            assert_eq!(w[5].start - w[3].end, stagger);
            // Relay forward after the longer source frame, then the ACKs.
            assert_eq!(w[6].start - w[4].end.max(w[5].end), t.sifs);
            for i in 6..9 {
                assert_eq!(gap(i, i + 1), t.sifs);
            }
            n += 1;
        }
    }
    assert!(n > 50, "{n}");
}

#[test]
fn every_nav_covers_its_horizon() {
    let t = TimingParams::default();
    let mut n = 0;
    for seed in 1..=3 {
        let trace = alice_bob_trace(seed);
        for w in full_exchanges(&trace) {
            let co_end = w[3].end;
            let ack_pnc_end = w[9].end;
            // RTS-PNC reserves through CO-PNC.
            assert_eq!(w[0].nav_until, co_end);
            // Each CTS reserves its source's single-source exchange.
            let data = t.t_data(1000);
            assert_eq!(w[1].nav_until, co_end + t.sifs + data + t.sifs + t.t_ack());
            assert_eq!(w[2].nav_until, co_end + 2 * t.sifs + t.phy_hdr + t.t_mac_hdr() + data + t.sifs + t.t_ack());
            // From CO-PNC on, every NAV reaches the end of ACK-PNC.
            for r in &w[3..] {
                assert!(r.nav_until >= ack_pnc_end, "{} < {ack_pnc_end}: {}", r.nav_until, r.to_line());
            }
            n += 1;
        }
    }
    assert!(n > 50);
}

/// Single-source PNC timelines relative to the end of CO-PNC.
#[test]
fn single_source_schedules() {
    let t = TimingParams::default();
    let data = t.t_data(1000);
    let a_end: Micros = t.sifs + data + t.sifs + t.t_ack();
    let b_end: Micros = 2 * t.sifs + t.phy_hdr + t.t_mac_hdr() + data + t.sifs + t.t_ack();
    assert_eq!((a_end, b_end), (9012, 9582));
    let mut found = [0usize; 2];
    for seed in 1..=6 {
        let mut c = poisson(cfg(Protocol::Pnc, random(seed), 10, seed), 10.0);
        c.trace = true;
        let trace = run(&c).unwrap().trace;
        for (i, r) in trace.iter().enumerate() {
            let Frame::CoPnc { relay, a_has_data, b_has_data, .. } = r.frame else { continue };
            if a_has_data == b_has_data {
                continue;
            }
            // The source's DATA to the relay and the relay's ACK.
            let data = trace[i + 1..].iter().take_while(|x| x.start < r.end + b_end).find(|x| {
                matches!(&x.frame, Frame::Data(d) if d.receiver == relay && !d.superposed)
            });
            let ack = trace[i + 1..]
                .iter()
                .take_while(|x| x.start < r.end + b_end)
                .find(|x| x.node == relay && x.frame.kind() == FrameKind::Ack);
            let (Some(d), Some(k)) = (data, ack) else { continue };
            if d.outcome() != "ok" {
                continue;
            }
            let rel = k.end - r.end;
            if a_has_data {
                assert_eq!(rel, a_end, "{}", d.to_line());
                assert_eq!(d.start - r.end, t.sifs);
                found[0] += 1;
            } else {
                assert_eq!(rel, b_end, "{}", d.to_line());
                assert_eq!(d.start - r.end, 2 * t.sifs + t.phy_hdr + t.t_mac_hdr());
                found[1] += 1;
            }
        }
    }
    assert!(found.iter().all(|&k| k > 0), "{found:?}");
}

#[test]
fn a_source_is_never_the_longer_one() {
    // Role assignment: A's payload never exceeds B's.
    for seed in 1..=3 {
        for w in full_exchanges(&alice_bob_trace(seed)) {
            let (a, b) = (w[4].frame.data().unwrap(), w[5].frame.data().unwrap());
            assert!(a.payload_len() <= b.payload_len());
            let Frame::RtsPnc { src_a, src_b, .. } = w[0].frame else { unreachable!() };
            assert_eq!((w[4].node, w[5].node), (src_a, src_b));
        }
    }
}

#[test]
fn alice_bob_ordering_and_exchange_mix() {
    let tput = |p| run(&cfg(p, TopologySpec::Wheel { pairs: 1 }, 5, 1)).unwrap();
    let (pnc, cnc, dot11) = (tput(Protocol::Pnc), tput(Protocol::Cnc), tput(Protocol::Dot11));
    assert!(pnc.metrics.throughput_bps() > cnc.metrics.throughput_bps());
    assert!(cnc.metrics.throughput_bps() > dot11.metrics.throughput_bps());
    assert!(pnc.metrics.exchanges.pnc > pnc.metrics.exchanges.unicast);
    assert_eq!(cnc.metrics.exchanges.pnc, 0);
    assert_eq!(dot11.metrics.exchanges.cnc + dot11.metrics.exchanges.pnc, 0);
}
