//! Analytic physical layer.
//!
//! Links are modelled by deterministic path loss `|h|^2 = d^-alpha`. A receiver
//! sees DBPSK chips (11-chip Barker spreading at 1 Mbit/s) corrupted by thermal
//! noise plus the summed power of every concurrent transmitter it is not trying
//! to decode, treated as extra Gaussian noise. Chip errors are despread to bit
//! errors and bit errors to a packet error probability, which is then sampled
//! once per reception.

use libm::{erfc, expm1, log10, log1p, pow, sqrt};
use rand::Rng;
use thiserror::Error;

use crate::ids::Micros;

const BARKER_LEN: u32 = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("packet error probability needs at least one segment")]
    NoSegments,
}

/// Complex channel gain between two nodes, kept as power gain plus phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelGain {
    pub magnitude_sq: f64,
    /// Radians in `[0, 2*pi)`. Not used by the analytic BER chain.
    pub phase: f64,
}

/// Path-loss gain for a link of `distance_m` metres.
pub fn pathloss_gain(distance_m: f64, alpha: f64, phase: f64) -> Result<ChannelGain, PhyError> {
    if !(distance_m > 0.0) {
        return Err(PhyError::NonPositiveDistance(distance_m));
    }
    Ok(ChannelGain {
        magnitude_sq: pow(distance_m, -alpha),
        phase,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhyParams {
    pub tx_power_dbm: f64,
    pub noise_density_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub path_loss_exp: f64,
    pub chip_rate_hz: f64,
    pub bit_rate_bps: f64,
    pub cca_sensitivity_dbm: f64,
}

impl Default for PhyParams {
    fn default() -> Self {
        PhyParams {
            tx_power_dbm: 3.0,
            noise_density_dbm_hz: -174.0,
            noise_figure_db: 6.0,
            path_loss_exp: 4.0,
            chip_rate_hz: 11e6,
            bit_rate_bps: 1e6,
            cca_sensitivity_dbm: -100.0,
        }
    }
}

impl PhyParams {
    pub fn tx_power_w(&self) -> f64 {
        dbm_to_w(self.tx_power_dbm)
    }

    /// Noise density after the receiver noise figure, in W/Hz.
    pub fn noise_density_w_hz(&self) -> f64 {
        dbm_to_w(self.noise_density_dbm_hz + self.noise_figure_db)
    }

    pub fn chip_duration_s(&self) -> f64 {
        1.0 / self.chip_rate_hz
    }

    pub fn chips_per_bit(&self) -> f64 {
        self.chip_rate_hz / self.bit_rate_bps
    }

    /// Received power in watts over a link with the given gain.
    pub fn rx_power_w(&self, gain: &ChannelGain) -> f64 {
        self.tx_power_w() * gain.magnitude_sq
    }

    /// Chip error probability for a single wanted signal of `signal_w` watts
    /// with `interference_w` watts of unwanted concurrent signal.
    pub fn chip_ber(&self, signal_w: f64, interference_w: f64) -> f64 {
        let ts = self.chip_duration_s();
        ber_dbpsk_chip(signal_w * ts, self.noise_density_w_hz(), interference_w * ts)
    }

    /// Chip error probability of the denoise-and-forward mapping of two
    /// superposed signals.
    pub fn chip_ber_dnf(&self, signal_a_w: f64, signal_b_w: f64, interference_w: f64) -> f64 {
        let ts = self.chip_duration_s();
        ber_dnf_chip(
            signal_a_w.min(signal_b_w) * ts,
            self.noise_density_w_hz(),
            interference_w * ts,
        )
    }

    /// Interference-free packet error probability of a `bits`-long frame at
    /// the given received signal strength.
    pub fn clean_per(&self, rss_dbm: f64, bits: u64) -> f64 {
        let p_bit = ber_despread(self.chip_ber(dbm_to_w(rss_dbm), 0.0));
        packet_error_prob(&[BitSegment { bits, ber: p_bit }]).unwrap_or(1.0)
    }

    /// The interference-free RSS at which a `bits`-long frame reaches
    /// `target_per`, found by bisection (PER is monotone in RSS).
    pub fn rss_for_per(&self, target_per: f64, bits: u64) -> f64 {
        let (mut lo, mut hi) = (-130.0_f64, -50.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.clean_per(mid, bits) > target_per {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Distance at which the interference-free RSS equals `rss_dbm`.
    pub fn range_for_rss(&self, rss_dbm: f64) -> f64 {
        pow(10.0, (self.tx_power_dbm - rss_dbm) / (10.0 * self.path_loss_exp))
    }
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    pow(10.0, dbm / 10.0) / 1000.0
}

pub fn w_to_dbm(w: f64) -> f64 {
    10.0 * log10(w * 1000.0)
}

/// Received signal strength in dBm.
pub fn rss_dbm(tx_power_dbm: f64, gain: &ChannelGain) -> f64 {
    tx_power_dbm + 10.0 * log10(gain.magnitude_sq)
}

/// Gaussian tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / core::f64::consts::SQRT_2)
}

/// DBPSK chip error probability, `2 Q(sqrt(2 Es / (N0 + I Ts)))`, capped at 1/2.
pub fn ber_dbpsk_chip(es: f64, n0: f64, interference_energy: f64) -> f64 {
    let snr = es / (n0 + interference_energy);
    (2.0 * q_function(sqrt(2.0 * snr))).min(0.5)
}

/// Conservative DNF chip error: twice the DBPSK error at the weaker
/// component's energy, capped at 1/2.
pub fn ber_dnf_chip(es_min: f64, n0: f64, interference_energy: f64) -> f64 {
    (2.0 * ber_dbpsk_chip(es_min, n0, interference_energy)).min(0.5)
}

/// Bit error after correlating against the 11-chip Barker word: the bit is
/// wrong when six or more chips are wrong.
pub fn ber_despread(p_chip: f64) -> f64 {
    let p = p_chip.clamp(0.0, 1.0);
    let q = 1.0 - p;
    let mut binom = 1.0;
    let mut total = 0.0;
    for m in 0..=5u32 {
        if m > 0 {
            binom = binom * f64::from(BARKER_LEN - m + 1) / f64::from(m);
        }
        total += binom * pow(q, f64::from(m)) * pow(p, f64::from(BARKER_LEN - m));
    }
    total
}

/// Independent composition of two cascaded chip error stages.
pub fn compose_chip_errors(p1: f64, p2: f64) -> f64 {
    p1 + p2 - p1 * p2
}

/// A run of bits sharing one bit error probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BitSegment {
    pub bits: u64,
    pub ber: f64,
}

/// Probability that at least one bit is wrong, `1 - prod (1 - p)^bits`.
pub fn packet_error_prob(segments: &[BitSegment]) -> Result<f64, PhyError> {
    if segments.is_empty() {
        return Err(PhyError::NoSegments);
    }
    let mut log_ok = 0.0;
    for seg in segments {
        if seg.bits == 0 || seg.ber <= 0.0 {
            continue;
        }
        if seg.ber >= 1.0 {
            return Ok(1.0);
        }
        log_ok += seg.bits as f64 * log1p(-seg.ber);
    }
    Ok(-expm1(log_ok))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RxOutcome {
    Ok,
    Corrupted,
}

/// One Bernoulli draw deciding whether a frame survives.
pub fn sample_reception<R: Rng + ?Sized>(per: f64, rng: &mut R) -> RxOutcome {
    // Always draw so the stream position does not depend on the PER value.
    let u: f64 = rng.gen();
    if u < per {
        RxOutcome::Corrupted
    } else {
        RxOutcome::Ok
    }
}

/// Clear-channel assessment on the summed power of all concurrent signals.
pub fn cca_busy(total_rss_w: f64, sensitivity_dbm: f64) -> bool {
    total_rss_w > 0.0 && w_to_dbm(total_rss_w) >= sensitivity_dbm
}

/// An interval of constant interference while a frame is on the air.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalSegment {
    pub start: Micros,
    pub end: Micros,
    /// Summed received power of unwanted concurrent transmitters.
    pub interference_power_w: f64,
}

impl SignalSegment {
    pub fn duration(&self) -> Micros {
        self.end - self.start
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian_tail_by_simpson(x: f64) -> f64 {
        // Integrate the standard normal density over [x, x + 40].
        let n = 200_000;
        let h = 40.0 / n as f64;
        let pdf = |t: f64| libm::exp(-0.5 * t * t) / libm::sqrt(2.0 * core::f64::consts::PI);
        let mut sum = pdf(x) + pdf(x + 40.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * pdf(x + i as f64 * h);
        }
        sum * h / 3.0
    }

    #[test]
    fn gain_follows_inverse_power_law() {
        let g = pathloss_gain(1.0, 4.0, 0.0).unwrap();
        assert_eq!(g.magnitude_sq, 1.0);
        let g = pathloss_gain(150.0, 4.0, 1.0).unwrap();
        assert_eq!(g.magnitude_sq, pow(150.0, -4.0));
        assert_eq!(g.phase, 1.0);
        let g = pathloss_gain(300.0, 4.0, 0.0).unwrap();
        assert!((g.magnitude_sq - 1.2345679e-10).abs() < 1e-16);
    }

    #[test]
    fn gain_rejects_bad_distance() {
        assert!(pathloss_gain(0.0, 4.0, 0.0).is_err());
        assert!(pathloss_gain(-3.0, 4.0, 0.0).is_err());
        assert!(pathloss_gain(f64::NAN, 4.0, 0.0).is_err());
    }

    #[test]
    fn rss_matches_hop_distances() {
        for (d, want) in [(150.0, -84.0), (300.0, -96.1), (450.0, -103.1)] {
            let g = pathloss_gain(d, 4.0, 0.0).unwrap();
            let got = rss_dbm(3.0, &g);
            assert!((got - want).abs() <= 0.05, "d={d}: {got}");
        }
    }

    #[test]
    fn q_function_reference_points() {
        assert_eq!(q_function(0.0), 0.5);
        assert!(q_function(40.0) < 1e-300);
        let oracle = gaussian_tail_by_simpson(1.2816);
        assert!((q_function(1.2816) - oracle).abs() < 1e-12);
        assert!((q_function(1.2816) - 0.1).abs() < 1e-4);
        for x in [-8.0, -2.5, -0.3, 0.7, 2.0, 3.3, 5.0] {
            let oracle = gaussian_tail_by_simpson(x);
            assert!((q_function(x) - oracle).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn dbpsk_chip_examples() {
        assert_eq!(ber_dbpsk_chip(0.0, 1.0, 0.0), 0.5);
        // Es/(N0 + I Ts) = 2.18 gives 2 Q(2.088).
        let p = ber_dbpsk_chip(2.18, 1.0, 0.0);
        assert!((p - 2.0 * q_function(libm::sqrt(4.36))).abs() < 1e-15);
        assert!((p - 0.0368).abs() < 5e-4, "{p}");
        // Interference counts like noise.
        assert_eq!(ber_dbpsk_chip(2.18, 0.5, 0.5), p);
        assert!(ber_dbpsk_chip(1e6, 1.0, 0.0) < 1e-300);
    }

    #[test]
    fn dnf_chip_examples() {
        assert_eq!(ber_dnf_chip(0.0, 1.0, 0.0), 0.5);
        let p = ber_dbpsk_chip(2.18, 1.0, 0.0);
        assert_eq!(ber_dnf_chip(2.18, 1.0, 0.0), 2.0 * p);
        assert!((ber_dnf_chip(2.18, 1.0, 0.0) - 0.0736).abs() < 1e-3);
    }

    #[test]
    fn despread_examples() {
        assert_eq!(ber_despread(0.0), 0.0);
        assert!((ber_despread(0.5) - 0.5).abs() < 1e-15);
        // The 6-chip term dominates: 462 * 0.037^6 * 0.963^5 is about 9.8e-7.
        let p = ber_despread(0.037);
        assert!((p - 1.009e-6).abs() < 1e-9, "{p}");
    }

    #[test]
    fn packet_error_examples() {
        let one = packet_error_prob(&[BitSegment { bits: 1, ber: 0.25 }]).unwrap();
        assert!((one - 0.25).abs() < 1e-15);
        let big = packet_error_prob(&[BitSegment { bits: 8000, ber: 1e-4 }]).unwrap();
        assert!((big - 0.5507).abs() < 1e-3, "{big}");
        let with_clean = packet_error_prob(&[
            BitSegment { bits: 8000, ber: 1e-4 },
            BitSegment { bits: 500, ber: 0.0 },
        ])
        .unwrap();
        assert_eq!(with_clean, big);
        assert_eq!(packet_error_prob(&[]), Err(PhyError::NoSegments));
    }

    #[test]
    fn reception_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            assert_eq!(sample_reception(0.0, &mut rng), RxOutcome::Ok);
            assert_eq!(sample_reception(1.0, &mut rng), RxOutcome::Corrupted);
        }
        let n = 100_000;
        let bad = (0..n)
            .filter(|_| sample_reception(0.3, &mut rng) == RxOutcome::Corrupted)
            .count();
        let frac = bad as f64 / n as f64;
        assert!((frac - 0.3).abs() < 0.01, "{frac}");
    }

    #[test]
    fn cca_examples() {
        assert!(!cca_busy(0.0, -100.0));
        let p = PhyParams::default();
        let one_hop = p.rx_power_w(&pathloss_gain(150.0, 4.0, 0.0).unwrap());
        assert!(cca_busy(one_hop, -100.0));
        let three_hops = p.rx_power_w(&pathloss_gain(450.0, 4.0, 0.0).unwrap());
        assert!(!cca_busy(three_hops, -100.0));
        // Several far nodes together can cross the threshold.
        assert!(!cca_busy(2.0 * three_hops, -100.0));
        assert!(cca_busy(3.0 * three_hops, -100.0));
    }

    #[test]
    fn effective_noise_density() {
        let p = PhyParams::default();
        assert!((w_to_dbm(p.noise_density_w_hz()) + 168.0).abs() < 1e-9);
        assert_eq!(p.chips_per_bit(), 11.0);
    }

    #[test]
    fn one_percent_threshold_near_reported_value() {
        let p = PhyParams::default();
        let thr = p.rss_for_per(0.01, 8 * (1000 + 46));
        assert!((thr - (-93.2)).abs() <= 1.5, "{thr}");
        assert!((p.clean_per(thr, 8368) - 0.01).abs() < 1e-6);
        let range = p.range_for_rss(thr);
        assert!(range > 240.0 && range < 300.0, "{range}");
    }

    #[test]
    fn monotone_in_energy_and_interference() {
        let mut last = 1.0;
        for k in 0..50 {
            let p = ber_dbpsk_chip(k as f64 * 0.1, 1.0, 0.3);
            assert!(p <= last);
            last = p;
        }
        let mut last = 0.0;
        for k in 0..50 {
            let p = ber_dbpsk_chip(2.0, 1.0, k as f64 * 0.1);
            assert!(p >= last);
            last = p;
        }
    }
}
