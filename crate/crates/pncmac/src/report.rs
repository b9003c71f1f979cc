//! Seed fan-out and CSV rows.

use std::io::Write;

use pncmac_core::sim::trace::TRACE_HEADER;
use pncmac_core::{Metrics, SimError, SimOutput};
use rayon::prelude::*;

use crate::config::{ConfigError, ScenarioConfig};

/// Column order of every result file.
pub const CSV_HEADER: [&str; 10] = [
    "scenario",
    "protocol",
    "swept_value",
    "seed",
    "flow",
    "throughput_bps",
    "mean_delay_s",
    "drops",
    "pnc_count",
    "cnc_count",
];

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}: {source}")]
    Sim { seed: u64, source: SimError },
}

impl RunError {
    /// Configuration problems are usage errors; everything else is a
    /// runtime failure.
    pub fn is_usage(&self) -> bool {
        match self {
            RunError::Config(_) => true,
            RunError::Sim { source, .. } => {
                matches!(source, SimError::Config(_) | SimError::InfeasibleWheel { .. })
            }
        }
    }
}

/// One finished seed.
pub struct SeedRun {
    pub seed: u64,
    pub output: SimOutput,
}

pub fn run_seed(cfg: &ScenarioConfig, seed: u64, trace: bool) -> Result<SeedRun, RunError> {
    let mut sim = cfg.sim_config(seed)?;
    sim.trace = trace;
    let output = pncmac_core::run(&sim).map_err(|source| RunError::Sim { seed, source })?;
    Ok(SeedRun { seed, output })
}

/// All seeds of a scenario in parallel, returned in seed order.
pub fn run_all(cfg: &ScenarioConfig, trace: bool) -> Vec<Result<SeedRun, RunError>> {
    cfg.seed_list().par_iter().map(|&s| run_seed(cfg, s, trace)).collect()
}

/// Summary numbers of one seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedSummary {
    pub throughput_bps: f64,
    pub mean_delay_s: Option<f64>,
    pub drops: u64,
    pub pnc_count: u64,
    pub cnc_count: u64,
}

impl SeedSummary {
    pub fn of(m: &Metrics) -> SeedSummary {
        SeedSummary {
            throughput_bps: m.throughput_bps(),
            mean_delay_s: m.mean_delay_s(),
            drops: m.total_drops(),
            pnc_count: m.exchanges.pnc,
            cnc_count: m.exchanges.cnc,
        }
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.3}")
}

pub fn fmt_delay(v: Option<f64>) -> String {
    v.map(|d| format!("{d:.6}")).unwrap_or_default()
}

/// Rows for one seed: each bidirectional flow, then the seed total.
pub fn seed_rows(scenario: &str, protocol: &str, swept: &str, run: &SeedRun) -> Vec<Vec<String>> {
    let m = &run.output.metrics;
    let span = m.duration - m.warmup.min(m.duration);
    let seed = run.seed.to_string();
    let mut rows = Vec::new();
    for &(a, b) in &run.output.topology.flows {
        let dirs: Vec<_> = [(a, b), (b, a)].iter().filter_map(|k| m.flows.get(k)).collect();
        let tput: f64 = dirs.iter().map(|f| f.throughput_bps(span)).sum();
        let n: u64 = dirs.iter().map(|f| f.delivered_packets).sum();
        let sum: u128 = dirs.iter().map(|f| f.delay_sum_us).sum();
        let delay = (n > 0).then(|| sum as f64 / n as f64 / 1e6);
        let drops: u64 = dirs.iter().map(|f| f.dropped).sum();
        rows.push(vec![
            scenario.to_string(),
            protocol.to_string(),
            swept.to_string(),
            seed.clone(),
            format!("{a}-{b}"),
            fmt_f64(tput),
            fmt_delay(delay),
            drops.to_string(),
            String::new(),
            String::new(),
        ]);
    }
    let s = SeedSummary::of(m);
    rows.push(vec![
        scenario.to_string(),
        protocol.to_string(),
        swept.to_string(),
        seed,
        "all".into(),
        fmt_f64(s.throughput_bps),
        fmt_delay(s.mean_delay_s),
        s.drops.to_string(),
        s.pnc_count.to_string(),
        s.cnc_count.to_string(),
    ]);
    rows
}

/// Mean over seeds, written with seed `all`.
pub fn mean_row(scenario: &str, protocol: &str, swept: &str, runs: &[SeedRun]) -> Vec<String> {
    let sums: Vec<SeedSummary> = runs.iter().map(|r| SeedSummary::of(&r.output.metrics)).collect();
    let n = sums.len().max(1) as f64;
    let delays: Vec<f64> = sums.iter().filter_map(|s| s.mean_delay_s).collect();
    let mean_u = |f: fn(&SeedSummary) -> u64| fmt_f64(sums.iter().map(f).sum::<u64>() as f64 / n);
    vec![
        scenario.to_string(),
        protocol.to_string(),
        swept.to_string(),
        "all".into(),
        "all".into(),
        fmt_f64(sums.iter().map(|s| s.throughput_bps).sum::<f64>() / n),
        fmt_delay((!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64)),
        mean_u(|s| s.drops),
        mean_u(|s| s.pnc_count),
        mean_u(|s| s.cnc_count),
    ]
}

pub fn write_csv<W: Write>(out: W, rows: &[Vec<String>]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace<W: Write>(mut out: W, run: &SeedRun) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in &run.output.trace {
        writeln!(out, "{}", r.to_line())?;
    }
    Ok(())
}

/// Sample mean and standard deviation; the deviation is 0 for one sample.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}
