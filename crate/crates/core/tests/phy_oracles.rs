use pncmac_core::phy::{
    ber_despread, packet_error_prob, pathloss_gain, rss_dbm, BitSegment, PhyParams,
};
use pncmac_core::frames::TimingParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sum over all 2^11 chip error patterns with six or more wrong chips.
fn despread_by_enumeration(p: f64) -> f64 {
    (0u32..1 << 11)
        .filter(|m| m.count_ones() >= 6)
        .map(|m| p.powi(m.count_ones() as i32) * (1.0 - p).powi(11 - m.count_ones() as i32))
        .sum()
}

#[test]
fn despread_matches_enumeration() {
    let mut ps = vec![0.0, 1e-6, 1e-4, 1e-3, 0.01, 0.05, 0.1, 0.2, 0.3, 0.45, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    ps.extend((0..200).map(|_| rng.gen_range(0.0..0.5)));
    for p in ps {
        let want = despread_by_enumeration(p);
        let got = ber_despread(p);
        assert!((got - want).abs() <= 1e-12, "p={p}: {got} vs {want}");
    }
}

#[test]
fn packet_error_matches_bit_flipping() {
    let segments = [
        BitSegment { bits: 200, ber: 2e-3 },
        BitSegment { bits: 120, ber: 1e-2 },
        BitSegment { bits: 400, ber: 5e-4 },
    ];
    let p = packet_error_prob(&segments).unwrap();
    let trials = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failed = 0u32;
    for _ in 0..trials {
        let hit = segments
            .iter()
            .any(|s| (0..s.bits).fold(false, |acc, _| rng.gen::<f64>() < s.ber || acc));
        failed += u32::from(hit);
    }
    let est = f64::from(failed) / f64::from(trials);
    let sigma = (p * (1.0 - p) / f64::from(trials)).sqrt();
    assert!((est - p).abs() <= 3.0 * sigma, "analytic {p}, simulated {est}, sigma {sigma}");
}

#[test]
fn neighbour_rss_values() {
    let phy = PhyParams::default();
    for (d, want) in [(150.0, -84.0), (300.0, -96.1), (450.0, -103.1)] {
        let g = pathloss_gain(d, phy.path_loss_exp, 0.0).unwrap();
        let rss = rss_dbm(phy.tx_power_dbm, &g);
        assert!((rss - want).abs() <= 0.05, "{d} m: {rss}");
    }
}

#[test]
fn one_percent_threshold_and_range() {
    let phy = PhyParams::default();
    let t = TimingParams::default();
    let bits = (t.t_data(1000) - t.phy_hdr) * t.bit_rate;
    let thr = phy.rss_for_per(0.01, bits);
    assert!((thr - -93.2).abs() <= 1.5, "threshold {thr}");
    assert!((phy.clean_per(thr, bits) - 0.01).abs() < 1e-6);
    let range = phy.range_for_rss(thr);
    assert!((230.0..290.0).contains(&range), "range {range}");
}
