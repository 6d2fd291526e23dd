//! Scenario files: TOML with one table per concern, overridable from the
//! environment.
//!
//! An override variable `AXSCHED_<SECTION>__<KEY>=<value>` sets `key` in
//! `[section]`; top-level keys use `AXSCHED_<KEY>`. Values are parsed as
//! TOML literals and fall back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::AgentConfig;
use crate::baselines::{BufferOrder, SusParams};
use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::oracle::OracleLimits;
use crate::phy::PhyParams;
use crate::ru_plan::RuLayout;
use crate::world::{Cell, TrafficParams};

pub const ENV_PREFIX: &str = "AXSCHED_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Dhqn,
    SinrSearched,
    SinrFixed,
    BufferFixed,
    Oracle,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 5] = [
        SchedulerKind::Dhqn,
        SchedulerKind::SinrSearched,
        SchedulerKind::SinrFixed,
        SchedulerKind::BufferFixed,
        SchedulerKind::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::Dhqn => "dhqn",
            SchedulerKind::SinrSearched => "sinr_searched",
            SchedulerKind::SinrFixed => "sinr_fixed",
            SchedulerKind::BufferFixed => "buffer_fixed",
            SchedulerKind::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheduler `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bandwidth {
    #[serde(rename = "20mhz")]
    Mhz20,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub stations: usize,
    pub rx_antennas: usize,
    pub tx_antennas: usize,
    pub bandwidth: Bandwidth,
    /// Replaces the preset's RU table when set.
    pub layout_file: Option<PathBuf>,
    pub packet_bytes: u32,
    pub ppdu_max_s: f64,
    pub symbol_s: f64,
    pub overhead_s: f64,
    /// Per-STA overheads; overrides `overhead_s` when present.
    pub overhead_per_station_s: Option<Vec<f64>>,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            stations: 20,
            rx_antennas: 8,
            tx_antennas: 2,
            bandwidth: Bandwidth::Mhz20,
            layout_file: None,
            packet_bytes: 1500,
            ppdu_max_s: 4.848e-3,
            symbol_s: 13.6e-6,
            overhead_s: 100e-6,
            overhead_per_station_s: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub sus_alpha: f64,
    pub buffer_order: BufferOrder,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            sus_alpha: SusParams::default().alpha,
            buffer_order: BufferOrder::Ascending,
        }
    }
}

impl BaselineConfig {
    pub fn sus(&self) -> SusParams {
        SusParams {
            alpha: self.sus_alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub episodes: usize,
    /// Seed for evaluation drops; defaults to a value derived from the
    /// training seed so evaluation never replays training episodes.
    pub seed: Option<u64>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            episodes: 20,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub stations: Vec<usize>,
    pub warmup: usize,
    pub iterations: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            stations: vec![5, 10, 20],
            warmup: 3,
            iterations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub episodes: usize,
    pub max_steps: usize,
    pub replications: usize,
    /// Run replications on a thread pool.
    pub parallel: bool,
    pub scheduler: SchedulerKind,
    pub output_dir: PathBuf,
    /// Fill the wall-clock column; off by default so reruns are byte-identical.
    pub record_wall_clock: bool,
    pub cell: CellConfig,
    pub channel: ChannelParams,
    pub traffic: TrafficParams,
    pub agent: AgentConfig,
    pub baselines: BaselineConfig,
    pub oracle: OracleLimits,
    pub evaluate: EvaluateConfig,
    pub bench: BenchConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            episodes: 100,
            max_steps: 64,
            replications: 1,
            parallel: false,
            scheduler: SchedulerKind::Dhqn,
            output_dir: PathBuf::from("out"),
            record_wall_clock: false,
            cell: CellConfig::default(),
            channel: ChannelParams::default(),
            traffic: TrafficParams::default(),
            agent: AgentConfig::default(),
            baselines: BaselineConfig::default(),
            oracle: OracleLimits::default(),
            evaluate: EvaluateConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `AXSCHED_` overrides from `vars` to a parsed document.
pub fn apply_overrides<I>(doc: &mut toml::Table, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!(
                "malformed override variable `{key}`"
            )));
        }
        let (last, sections) = path.split_last().expect("non-empty path");
        let mut table = &mut *doc;
        for s in sections {
            let entry = table
                .entry(s.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry.as_table_mut().ok_or_else(|| {
                Error::Config(format!("override `{key}`: `{s}` is not a section"))
            })?;
        }
        table.insert(last.clone(), parse_value(&raw));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, std::iter::empty())
    }

    pub fn from_toml_with<I>(text: &str, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        apply_overrides(&mut doc, vars)?;
        let cfg: ScenarioConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with(&text, std::env::vars())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let c = &self.cell;
        if c.stations == 0 {
            return bad("cell.stations must be positive".into());
        }
        if c.tx_antennas == 0 || c.rx_antennas < c.tx_antennas {
            return bad("cell antennas must satisfy rx_antennas >= tx_antennas >= 1".into());
        }
        if c.stations >= 32 {
            return bad("cell.stations must be below 32".into());
        }
        if c.packet_bytes == 0 {
            return bad("cell.packet_bytes must be positive".into());
        }
        for (name, v) in [("ppdu_max_s", c.ppdu_max_s), ("symbol_s", c.symbol_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("cell.{name} must be positive"));
            }
        }
        if !(c.overhead_s >= 0.0 && c.overhead_s.is_finite()) {
            return bad("cell.overhead_s must be >= 0".into());
        }
        if let Some(v) = &c.overhead_per_station_s {
            if v.len() != c.stations || v.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return bad(
                    "cell.overhead_per_station_s needs one non-negative value per station".into(),
                );
            }
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        self.channel.validate()?;
        self.traffic.validate()?;
        self.agent.validate()?;
        self.baselines.sus().validate()?;
        if self.bench.iterations == 0 || self.bench.stations.iter().any(|&k| k == 0 || k >= 32) {
            return bad("bench needs iterations >= 1 and station counts in 1..32".into());
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<RuLayout> {
        match &self.cell.layout_file {
            Some(p) => RuLayout::load(p),
            None => match self.cell.bandwidth {
                Bandwidth::Mhz20 => Ok(RuLayout::twenty_mhz()),
            },
        }
    }

    /// Cell for this scenario with `stations` STAs.
    pub fn cell_with(&self, stations: usize) -> Result<Cell> {
        let layout = self.layout()?;
        let c = &self.cell;
        let mut phy = PhyParams::new(
            stations,
            self.channel.tx_power(),
            self.channel.noise_power(layout.fft_size()),
        );
        phy.packet_bits = 8.0 * c.packet_bytes as f64;
        phy.ppdu_max_s = c.ppdu_max_s;
        phy.symbol_s = c.symbol_s;
        phy.overhead_s = match &c.overhead_per_station_s {
            Some(v) if v.len() == stations => v.clone(),
            _ => vec![c.overhead_s; stations],
        };
        Cell::new(layout, stations, c.rx_antennas, c.tx_antennas, phy).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        })
    }

    pub fn cell(&self) -> Result<Cell> {
        self.cell_with(self.cell.stations)
    }

    pub fn evaluation_seed(&self) -> u64 {
        self.evaluate
            .seed
            .unwrap_or(self.seed ^ 0xE7A1_0000_0000_0000)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn sections_and_overrides() {
        let text = "seed = 4\nscheduler = \"sinr_fixed\"\n[cell]\nstations = 6\n[traffic]\narrival_rate = 200.0\n";
        let vars = vec![
            (
                "AXSCHED_TRAFFIC__ARRIVAL_RATE".to_string(),
                "10000".to_string(),
            ),
            ("AXSCHED_EPISODES".to_string(), "3".to_string()),
            ("AXSCHED_SCHEDULER".to_string(), "oracle".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let cfg = ScenarioConfig::from_toml_with(text, vars).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.cell.stations, 6);
        assert_eq!(cfg.traffic.arrival_rate, 10000.0);
        assert_eq!(cfg.episodes, 3);
        assert_eq!(cfg.scheduler, SchedulerKind::Oracle);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in [
            "scheduler = \"random\"",
            "[cell]\nrx_antennas = 1\ntx_antennas = 2",
            "[traffic]\narrival_rate = -1.0",
            "[cell]\nunknown_key = 1",
            "episodes = ",
        ] {
            assert!(
                matches!(ScenarioConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn cell_uses_packet_size_and_overheads() {
        let mut cfg = ScenarioConfig::default();
        cfg.cell.stations = 2;
        cfg.cell.overhead_per_station_s = Some(vec![1e-4, 2e-4]);
        let c = cfg.cell().unwrap();
        assert_eq!(c.phy.packet_bits, 12_000.0);
        assert_eq!(c.phy.overhead_s, vec![1e-4, 2e-4]);
        assert_eq!(c.goals.len(), 26);
    }

    #[test]
    fn scheduler_names() {
        for k in SchedulerKind::ALL {
            assert_eq!(k.as_str().parse::<SchedulerKind>().unwrap(), k);
        }
    }
}
