//! Parameter sweeps over protocols and seeds.

use std::path::Path;

use rayon::prelude::*;

use crate::config::{ConfigError, ProtocolName, ScenarioConfig};
use crate::report::{self, fmt_delay, fmt_f64, mean_std, RunError, SeedRun};

pub const PRESETS: [&str; 10] = [
    "fig8", "fig9", "fig10", "fig11", "fig12", "fig13", "fig14", "fig15", "fig16", "fig17",
];

pub const SUMMARY_HEADER: [&str; 10] = [
    "scenario",
    "protocol",
    "swept_value",
    "seeds_ok",
    "seeds_failed",
    "throughput_mean_bps",
    "throughput_std_bps",
    "mean_delay_mean_s",
    "mean_delay_std_s",
    "error",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Campaign {
    pub name: String,
    pub base: ScenarioConfig,
    /// Dotted config key that varies along the sweep.
    pub key: String,
    pub values: Vec<String>,
    pub protocols: Vec<ProtocolName>,
}

const LINE: &str = "[topology]\nkind = \"line\"\nnodes = 10\n";
const RANDOM: &str = "[traffic]\nmodel = \"poisson\"\nrate_pps = 5\n[topology]\nkind = \"random\"\n";

fn values<T: ToString>(xs: &[T]) -> Vec<String> {
    xs.iter().map(ToString::to_string).collect()
}

impl Campaign {
    /// A named figure preset. Even and odd figures of a pair share their
    /// runs; one plots throughput, the other delay.
    pub fn preset(name: &str) -> Option<Campaign> {
        let (base, key, vals) = match name {
            "fig8" | "fig9" => (
                "[topology]\nkind = \"wheel\"\npairs = 1\n",
                "topology.pairs",
                values(&(1..=10).collect::<Vec<_>>()),
            ),
            "fig10" | "fig11" => (LINE, "topology.nodes", values(&(3..=10).collect::<Vec<_>>())),
            "fig12" | "fig13" => (
                LINE,
                "phy.cca_sensitivity_dbm",
                values(&[-105.0, -102.5, -100.0, -97.5, -95.0, -92.5, -90.0, -87.5, -85.0, -82.5, -80.0]),
            ),
            "fig14" | "fig15" => (RANDOM, "traffic.rate_pps", values(&[1, 2, 3, 5, 7, 10, 15, 20])),
            "fig16" | "fig17" => (
                RANDOM,
                "mac.pnc_wait_timeout_s",
                values(&[0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0]),
            ),
            _ => return None,
        };
        let mut base = ScenarioConfig::load(base, &[]).expect("preset parses");
        base.scenario = name.to_string();
        Some(Campaign {
            name: name.to_string(),
            base,
            key: key.to_string(),
            values: vals,
            protocols: ProtocolName::ALL.to_vec(),
        })
    }

    /// Ten-second runs over three seeds, every other parameter kept.
    pub fn desk_scale(&mut self) {
        self.base.duration_s = 10.0;
        self.base.seeds = 3;
    }

    /// Configuration of one sweep point.
    pub fn point(&self, protocol: ProtocolName, value: &str) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = ScenarioConfig::load(
            &self.base.to_toml(),
            &[format!("{}={}", self.key, value)],
        )?;
        cfg.protocol = protocol;
        Ok(cfg)
    }
}

/// Per-seed rows and one summary row for a single (protocol, value) point.
pub struct PointResult {
    pub protocol: ProtocolName,
    pub value: String,
    pub runs: Vec<SeedRun>,
    pub failures: Vec<String>,
}

impl PointResult {
    pub fn summary_row(&self, scenario: &str) -> Vec<String> {
        let tput: Vec<f64> = self.runs.iter().map(|r| r.output.metrics.throughput_bps()).collect();
        let delay: Vec<f64> = self.runs.iter().filter_map(|r| r.output.metrics.mean_delay_s()).collect();
        let (tm, ts) = mean_std(&tput).map_or((String::new(), String::new()), |(m, s)| (fmt_f64(m), fmt_f64(s)));
        let (dm, ds) = mean_std(&delay).map_or((String::new(), String::new()), |(m, s)| {
            (fmt_delay(Some(m)), fmt_delay(Some(s)))
        });
        vec![
            scenario.to_string(),
            self.protocol.name().to_string(),
            self.value.clone(),
            self.runs.len().to_string(),
            self.failures.len().to_string(),
            tm,
            ts,
            dm,
            ds,
            self.failures.first().cloned().unwrap_or_default(),
        ]
    }

    pub fn mean_throughput(&self) -> Option<f64> {
        let tput: Vec<f64> = self.runs.iter().map(|r| r.output.metrics.throughput_bps()).collect();
        mean_std(&tput).map(|(m, _)| m)
    }
}

/// Run every (protocol, value, seed) in parallel. A failing run is recorded
/// against its point and the rest of the campaign proceeds.
pub fn run(c: &Campaign) -> Vec<PointResult> {
    let mut jobs = Vec::new();
    for &p in &c.protocols {
        for v in &c.values {
            match c.point(p, v) {
                Ok(cfg) => jobs.extend(cfg.seed_list().into_iter().map(|s| (p, v.clone(), Ok(cfg.clone()), s))),
                Err(e) => jobs.push((p, v.clone(), Err(e.to_string()), 0)),
            }
        }
    }
    let done: Vec<_> = jobs
        .into_par_iter()
        .map(|(p, v, cfg, seed)| {
            let r = cfg.and_then(|cfg| report::run_seed(&cfg, seed, false).map_err(|e: RunError| e.to_string()));
            (p, v, r)
        })
        .collect();
    let mut points: Vec<PointResult> = Vec::new();
    for (p, v, r) in done {
        let idx = match points.iter().position(|x| x.protocol == p && x.value == v) {
            Some(i) => i,
            None => {
                points.push(PointResult {
                    protocol: p,
                    value: v,
                    runs: Vec::new(),
                    failures: Vec::new(),
                });
                points.len() - 1
            }
        };
        match r {
            Ok(run) => points[idx].runs.push(run),
            Err(e) => points[idx].failures.push(e),
        }
    }
    points
}

/// Write `<name>.csv` (per-seed rows), `<name>_summary.csv` (mean and
/// standard deviation per point) and `<name>.toml` (the base scenario).
pub fn write(c: &Campaign, points: &[PointResult], dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    for pt in points {
        for r in &pt.runs {
            rows.extend(report::seed_rows(&c.name, pt.protocol.name(), &pt.value, r));
        }
        if !pt.runs.is_empty() {
            rows.push(report::mean_row(&c.name, pt.protocol.name(), &pt.value, &pt.runs));
        }
    }
    report::write_csv(std::fs::File::create(dir.join(format!("{}.csv", c.name)))?, &rows)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{}_summary.csv", c.name)))?;
    w.write_record(SUMMARY_HEADER)?;
    for pt in points {
        w.write_record(pt.summary_row(&c.name))?;
    }
    w.flush()?;
    std::fs::write(dir.join(format!("{}.toml", c.name)), c.base.to_toml())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds() {
        for name in PRESETS {
            let c = Campaign::preset(name).unwrap();
            for v in &c.values {
                c.point(ProtocolName::Pnc, v).unwrap();
            }
        }
        assert!(Campaign::preset("fig99").is_none());
    }

    #[test]
    fn fig8_has_three_curves_of_ten_points() {
        let c = Campaign::preset("fig8").unwrap();
        assert_eq!(c.protocols.len() * c.values.len(), 30);
    }

    #[test]
    fn desk_scale_keeps_protocol_parameters() {
        let mut c = Campaign::preset("fig12").unwrap();
        let before = c.base.clone();
        c.desk_scale();
        assert_eq!((c.base.duration_s, c.base.seeds), (10.0, 3));
        assert_eq!((c.base.phy.clone(), c.base.mac.clone()), (before.phy, before.mac));
    }
}
