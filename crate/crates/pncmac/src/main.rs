use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pncmac::campaign::{self, Campaign, PRESETS};
use pncmac::config::{ConfigError, ProtocolName, ScenarioConfig};
use pncmac::report::{self, RunError};

#[derive(Parser)]
#[command(name = "pncmac", version, about = "Multi-hop wireless MAC simulator with PNC, CNC and 802.11 DCF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario over its seeds and emit CSV.
    Run {
        /// TOML scenario file.
        config: PathBuf,
        /// `key=value`, dotted for nested keys (e.g. `phy.cca_sensitivity_dbm=-95`).
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Write `<scenario>.csv` and the effective config here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one frame trace per seed.
        #[arg(long)]
        trace: bool,
    },
    /// Sweep a figure preset (fig8 .. fig17) or a custom parameter.
    Campaign {
        /// fig8 .. fig17, or `custom`.
        name: String,
        /// 10 s runs over 3 seeds.
        #[arg(long)]
        desk_scale: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Base scenario file (custom only).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Swept key (custom only).
        #[arg(long)]
        sweep: Option<String>,
        /// Comma-separated values of the swept key (custom only).
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Protocols to run; all three by default.
        #[arg(long, value_delimiter = ',')]
        protocols: Vec<String>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|source| {
        Failure::from(ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    })
}

fn run_cmd(config: &Path, overrides: &[String], out: Option<&Path>, trace: bool) -> Result<(), Failure> {
    let cfg = ScenarioConfig::load(&read(config)?, overrides)?;
    let mut runs = Vec::new();
    for r in report::run_all(&cfg, trace) {
        runs.push(r?);
    }
    let mut rows = Vec::new();
    for r in &runs {
        rows.extend(report::seed_rows(&cfg.scenario, cfg.protocol.name(), "", r));
    }
    rows.push(report::mean_row(&cfg.scenario, cfg.protocol.name(), "", &runs));
    let dir = out.unwrap_or(Path::new("."));
    if out.is_some() || trace {
        std::fs::create_dir_all(dir).map_err(runtime)?;
    }
    if trace {
        for r in &runs {
            let path = dir.join(format!("{}_seed{}.trace", cfg.scenario, r.seed));
            let f = std::io::BufWriter::new(std::fs::File::create(path).map_err(runtime)?);
            report::write_trace(f, r).map_err(runtime)?;
        }
    }
    match out {
        Some(dir) => {
            let f = std::fs::File::create(dir.join(format!("{}.csv", cfg.scenario))).map_err(runtime)?;
            report::write_csv(f, &rows).map_err(runtime)?;
            std::fs::write(dir.join(format!("{}.toml", cfg.scenario)), cfg.to_toml()).map_err(runtime)?;
        }
        None => report::write_csv(std::io::stdout().lock(), &rows).map_err(runtime)?,
    }
    Ok(())
}

struct CustomArgs<'a> {
    config: Option<&'a Path>,
    sweep: Option<&'a str>,
    values: &'a [String],
    overrides: &'a [String],
}

fn build_campaign(name: &str, custom: CustomArgs<'_>, protocols: &[String]) -> Result<Campaign, Failure> {
    let mut c = if name == "custom" {
        let config = custom
            .config
            .ok_or_else(|| Failure::Usage("campaign custom needs --config".into()))?;
        let key = custom
            .sweep
            .ok_or_else(|| Failure::Usage("campaign custom needs --sweep".into()))?;
        if custom.values.is_empty() {
            return Err(Failure::Usage("campaign custom needs --values".into()));
        }
        let base = ScenarioConfig::load(&read(config)?, custom.overrides)?;
        Campaign {
            name: base.scenario.clone(),
            base,
            key: key.to_string(),
            values: custom.values.to_vec(),
            protocols: ProtocolName::ALL.to_vec(),
        }
    } else {
        let mut c = Campaign::preset(name).ok_or_else(|| {
            Failure::Usage(format!("unknown campaign `{name}`; expected one of {} or custom", PRESETS.join(", ")))
        })?;
        if !custom.overrides.is_empty() {
            c.base = ScenarioConfig::load(&c.base.to_toml(), custom.overrides)?;
        }
        c
    };
    if !protocols.is_empty() {
        c.protocols = protocols
            .iter()
            .map(|p| match p.as_str() {
                "pnc" => Ok(ProtocolName::Pnc),
                "cnc" => Ok(ProtocolName::Cnc),
                "dot11" => Ok(ProtocolName::Dot11),
                _ => Err(Failure::Usage(format!("unknown protocol `{p}` in --protocols"))),
            })
            .collect::<Result<_, _>>()?;
    }
    // Reject a bad sweep key before spending time on runs.
    c.point(c.protocols[0], &c.values[0])?;
    Ok(c)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run { config, overrides, out, trace } => run_cmd(&config, &overrides, out.as_deref(), trace),
        Command::Campaign { name, desk_scale, out, config, sweep, values, protocols, overrides } => {
            let custom = CustomArgs {
                config: config.as_deref(),
                sweep: sweep.as_deref(),
                values: &values,
                overrides: &overrides,
            };
            build_campaign(&name, custom, &protocols).and_then(|mut c| {
                if desk_scale {
                    c.desk_scale();
                }
                let points = campaign::run(&c);
                for pt in &points {
                    for f in &pt.failures {
                        eprintln!("{} {} {}={}: {f}", c.name, pt.protocol.name(), c.key, pt.value);
                    }
                }
                campaign::write(&c, &points, &out).map_err(runtime)
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
