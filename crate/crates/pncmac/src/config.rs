//! Scenario files: TOML with every key defaulted, plus dotted-key overrides.

use pncmac_core::frames::TimingParams;
use pncmac_core::mac::MacParams;
use pncmac_core::phy::PhyParams;
use pncmac_core::sim::TopologySpec;
use pncmac_core::{Micros, Protocol, SimConfig, TrafficModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("override `{0}` is not of the form key=value")]
    OverrideSyntax(String),
    #[error("override `{0}`: unknown key")]
    UnknownKey(String),
    #[error("missing required key `topology`")]
    MissingTopology,
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolName {
    Pnc,
    Cnc,
    Dot11,
}

impl ProtocolName {
    pub const ALL: [ProtocolName; 3] = [ProtocolName::Pnc, ProtocolName::Cnc, ProtocolName::Dot11];

    pub fn protocol(self) -> Protocol {
        match self {
            ProtocolName::Pnc => Protocol::Pnc,
            ProtocolName::Cnc => Protocol::Cnc,
            ProtocolName::Dot11 => Protocol::Dot11,
        }
    }

    pub fn name(self) -> &'static str {
        self.protocol().name()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TopologyConfig {
    Wheel {
        pairs: u16,
    },
    Line {
        nodes: u16,
    },
    Random {
        #[serde(default = "default_random_nodes")]
        nodes: u16,
        #[serde(default = "default_area")]
        area_m: f64,
        #[serde(default = "default_flows")]
        flows: u16,
        /// Fixed placement; each run seed draws its own placement when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        placement_seed: Option<u64>,
    },
}

fn default_random_nodes() -> u16 {
    40
}

fn default_area() -> f64 {
    1000.0
}

fn default_flows() -> u16 {
    10
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficKind {
    Backlogged,
    Poisson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub model: TrafficKind,
    /// Packets per second per flow direction; Poisson only.
    pub rate_pps: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            model: TrafficKind::Backlogged,
            rate_pps: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyConfig {
    pub tx_power_dbm: f64,
    pub noise_density_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub path_loss_exp: f64,
    pub cca_sensitivity_dbm: f64,
}

impl Default for PhyConfig {
    fn default() -> Self {
        let p = PhyParams::default();
        PhyConfig {
            tx_power_dbm: p.tx_power_dbm,
            noise_density_dbm_hz: p.noise_density_dbm_hz,
            noise_figure_db: p.noise_figure_db,
            path_loss_exp: p.path_loss_exp,
            cca_sensitivity_dbm: p.cca_sensitivity_dbm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacConfig {
    pub cw_min: u32,
    pub cw_max: u32,
    pub retry_limit: u32,
    pub queue_capacity: usize,
    pub pnc_wait_timeout_s: f64,
}

impl Default for MacConfig {
    fn default() -> Self {
        let m = MacParams::default();
        MacConfig {
            cw_min: m.cw_min,
            cw_max: m.cw_max,
            retry_limit: m.retry_limit,
            queue_capacity: m.queue_capacity,
            pnc_wait_timeout_s: TimingParams::default().pnc_wait_timeout as f64 / 1e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Identifier written in the first CSV column.
    pub scenario: String,
    pub protocol: ProtocolName,
    pub duration_s: f64,
    pub warmup_s: f64,
    /// Number of seeds, run as `seed_base`, `seed_base + 1`, ...
    pub seeds: u32,
    pub seed_base: u64,
    pub payload_bytes: u16,
    pub traffic: TrafficConfig,
    pub phy: PhyConfig,
    pub mac: MacConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyConfig>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: "run".into(),
            protocol: ProtocolName::Pnc,
            duration_s: 50.0,
            warmup_s: 0.0,
            seeds: 10,
            seed_base: 1,
            payload_bytes: 1000,
            traffic: TrafficConfig::default(),
            phy: PhyConfig::default(),
            mac: MacConfig::default(),
            topology: None,
        }
    }
}

fn seconds(key: &'static str, s: f64) -> Result<Micros, ConfigError> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(ConfigError::Invalid {
            key,
            reason: format!("{s} is not a non-negative number of seconds"),
        });
    }
    Ok((s * 1e6).round() as Micros)
}

fn invalid(key: &'static str, reason: &str) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

impl ScenarioConfig {
    /// Parse a scenario file after applying `key=value` overrides.
    pub fn load(text: &str, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        // Re-render so that type errors point at the offending line.
        let merged = toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let cfg: ScenarioConfig = toml::from_str(&merged).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..u64::from(self.seeds)).map(|i| self.seed_base + i).collect()
    }

    /// Range checks on every key the core does not validate with a key name.
    pub fn check(&self) -> Result<(), ConfigError> {
        let topo = self.topology.as_ref().ok_or(ConfigError::MissingTopology)?;
        match *topo {
            TopologyConfig::Wheel { pairs } if pairs == 0 => {
                return Err(invalid("topology.pairs", "must be at least 1"))
            }
            TopologyConfig::Line { nodes } if nodes < 2 => {
                return Err(invalid("topology.nodes", "must be at least 2"))
            }
            TopologyConfig::Random { nodes, area_m, flows, .. } => {
                if flows == 0 {
                    return Err(invalid("topology.flows", "must be at least 1"));
                }
                if u32::from(nodes) < 2 * u32::from(flows) {
                    return Err(invalid("topology.nodes", "needs two distinct endpoints per flow"));
                }
                if !(area_m.is_finite() && area_m > 0.0) {
                    return Err(invalid("topology.area_m", "must be positive"));
                }
            }
            _ => {}
        }
        let duration = seconds("duration_s", self.duration_s)?;
        if seconds("warmup_s", self.warmup_s)? > duration {
            return Err(invalid("warmup_s", "exceeds duration_s"));
        }
        if self.seeds == 0 {
            return Err(invalid("seeds", "must be at least 1"));
        }
        if self.payload_bytes == 0 {
            return Err(invalid("payload_bytes", "must be positive"));
        }
        if self.traffic.model == TrafficKind::Poisson
            && !(self.traffic.rate_pps.is_finite() && self.traffic.rate_pps > 0.0)
        {
            return Err(invalid("traffic.rate_pps", "must be positive"));
        }
        let m = &self.mac;
        if m.cw_min == 0 {
            return Err(invalid("mac.cw_min", "must be positive"));
        }
        if m.cw_max < m.cw_min {
            return Err(invalid("mac.cw_max", "must not be below mac.cw_min"));
        }
        if m.retry_limit == 0 {
            return Err(invalid("mac.retry_limit", "must be positive"));
        }
        if m.queue_capacity == 0 {
            return Err(invalid("mac.queue_capacity", "must be positive"));
        }
        if seconds("mac.pnc_wait_timeout_s", m.pnc_wait_timeout_s)? == 0 {
            return Err(invalid("mac.pnc_wait_timeout_s", "must be positive"));
        }
        if !(self.phy.path_loss_exp.is_finite() && self.phy.path_loss_exp > 0.0) {
            return Err(invalid("phy.path_loss_exp", "must be positive"));
        }
        for (key, v) in [
            ("phy.tx_power_dbm", self.phy.tx_power_dbm),
            ("phy.noise_density_dbm_hz", self.phy.noise_density_dbm_hz),
            ("phy.noise_figure_db", self.phy.noise_figure_db),
            ("phy.cca_sensitivity_dbm", self.phy.cca_sensitivity_dbm),
        ] {
            if !v.is_finite() {
                return Err(invalid(key, "must be finite"));
            }
        }
        Ok(())
    }

    /// Core configuration for one seed.
    pub fn sim_config(&self, seed: u64) -> Result<SimConfig, ConfigError> {
        self.check()?;
        let topology = match self.topology.clone().ok_or(ConfigError::MissingTopology)? {
            TopologyConfig::Wheel { pairs } => TopologySpec::Wheel { pairs },
            TopologyConfig::Line { nodes } => TopologySpec::Line { nodes },
            TopologyConfig::Random { nodes, area_m, flows, placement_seed } => TopologySpec::Random {
                nodes,
                area_m,
                flows,
                placement_seed,
            },
        };
        let mut c = SimConfig::new(self.protocol.protocol(), topology);
        c.duration = seconds("duration_s", self.duration_s)?;
        c.warmup = seconds("warmup_s", self.warmup_s)?;
        c.seed = seed;
        c.payload_bytes = self.payload_bytes;
        c.traffic = match self.traffic.model {
            TrafficKind::Backlogged => TrafficModel::Backlogged,
            TrafficKind::Poisson => TrafficModel::Poisson {
                rate_pps: self.traffic.rate_pps,
            },
        };
        c.phy.tx_power_dbm = self.phy.tx_power_dbm;
        c.phy.noise_density_dbm_hz = self.phy.noise_density_dbm_hz;
        c.phy.noise_figure_db = self.phy.noise_figure_db;
        c.phy.path_loss_exp = self.phy.path_loss_exp;
        c.phy.cca_sensitivity_dbm = self.phy.cca_sensitivity_dbm;
        c.mac = MacParams {
            cw_min: self.mac.cw_min,
            cw_max: self.mac.cw_max,
            retry_limit: self.mac.retry_limit,
            queue_capacity: self.mac.queue_capacity,
        };
        c.timing.pnc_wait_timeout = seconds("mac.pnc_wait_timeout_s", self.mac.pnc_wait_timeout_s)?;
        Ok(c)
    }
}

/// Keys that hold tables rather than values.
const SECTIONS: [&str; 4] = ["traffic", "phy", "mac", "topology"];

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::OverrideSyntax(spec.into()))?;
    let key = key.trim();
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) || path.len() > 2 || (path.len() == 1 && SECTIONS.contains(&path[0])) {
        return Err(ConfigError::UnknownKey(key.into()));
    }
    if path.len() == 2 && !SECTIONS.contains(&path[0]) {
        return Err(ConfigError::UnknownKey(key.into()));
    }
    let value = parse_value(raw.trim());
    let mut slot = table;
    for part in &path[..path.len() - 1] {
        let entry = slot
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        slot = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        };
    }
    slot.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

/// A TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const WHEEL: &str = "[topology]\nkind = \"wheel\"\npairs = 1\n";

    #[test]
    fn defaults_fill_every_key() {
        let c = ScenarioConfig::load(WHEEL, &[]).unwrap();
        assert_eq!(c.duration_s, 50.0);
        assert_eq!(c.seeds, 10);
        assert_eq!(c.phy.cca_sensitivity_dbm, -100.0);
        assert_eq!(c.mac.pnc_wait_timeout_s, 1.0);
        assert_eq!(c.topology, Some(TopologyConfig::Wheel { pairs: 1 }));
    }

    #[test]
    fn override_beats_file() {
        let text = format!("duration_s = 20\n{WHEEL}");
        let c = ScenarioConfig::load(&text, &["duration_s=3".into(), "topology.pairs=2".into()]).unwrap();
        assert_eq!(c.duration_s, 3.0);
        assert_eq!(c.topology, Some(TopologyConfig::Wheel { pairs: 2 }));
    }

    #[test]
    fn string_override_without_quotes() {
        let c = ScenarioConfig::load(WHEEL, &["protocol=cnc".into()]).unwrap();
        assert_eq!(c.protocol, ProtocolName::Cnc);
    }

    #[test]
    fn missing_topology_is_named() {
        let e = ScenarioConfig::load("", &[]).unwrap_err();
        assert!(e.to_string().contains("topology"));
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = ScenarioConfig::load(&format!("bogus = 1\n{WHEEL}"), &[]).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = ScenarioConfig::load(WHEEL, &["phy.cca=-90".into()]).unwrap_err();
        assert!(e.to_string().contains("cca"), "{e}");
        let e = ScenarioConfig::load(WHEEL, &["nothing.here=1".into()]).unwrap_err();
        assert!(e.to_string().contains("nothing.here"), "{e}");
    }

    #[test]
    fn bad_values_are_named() {
        let e = ScenarioConfig::load(WHEEL, &["phy.cca_sensitivity_dbm=loud".into()]).unwrap_err();
        assert!(e.to_string().contains("cca_sensitivity_dbm"), "{e}");
        let e = ScenarioConfig::load(WHEEL, &["mac.cw_max=3".into()]).unwrap_err();
        assert!(e.to_string().contains("mac.cw_max"), "{e}");
        let e = ScenarioConfig::load(WHEEL, &["seeds=0".into()]).unwrap_err();
        assert!(e.to_string().contains("seeds"), "{e}");
    }

    #[test]
    fn effective_config_round_trips() {
        let c = ScenarioConfig::load(WHEEL, &["traffic.model=poisson".into(), "warmup_s=0.5".into()]).unwrap();
        let back = ScenarioConfig::load(&c.to_toml(), &[]).unwrap();
        assert_eq!(c, back);
    }
}
