//! Scenario files.
//!
//! A TOML document with flat sections. Every key is optional; anything left
//! out takes the defaults below. Unknown keys are rejected.
//!
//! ```toml
//! sim_time = 10.0
//! seed = 1
//! runs = 10
//!
//! [scenario]
//! n_gnb = 10
//! n_ap = 10
//! nru_protocol = "gcr-lbt"
//!
//! [protocols]
//! n_sl = 3
//! p_rs = 0.5
//!
//! [compare]
//! protocols = ["rs-lbt", "gap-lbt", "gcr-lbt", "db-lbt-both"]
//! n = [1, 5, 10, 15]
//! ```

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::access::{NodeConfig, Priority, ProtocolKind, CW_MAX, CW_MIN, TX_DURATION_US};
use crate::engine::{Network, NodeId, SimTime};
use crate::metrics::JfiMode;
use crate::priority::{SkipLevel, SkipMode, MAX_LEVEL};
use crate::rl::DqnParams;
use crate::sim::Scenario;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{key}: {msg}")]
    Invalid { key: &'static str, msg: String },
    #[error("{key}: required for {mode} mode")]
    Missing { key: &'static str, mode: Mode },
}

fn invalid(key: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, msg: msg.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Compare,
    Skip,
    Train,
    Eval,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Compare => "compare",
            Mode::Skip => "skip",
            Mode::Train => "train",
            Mode::Eval => "eval",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JfiSetting {
    #[default]
    Network,
    PerNode,
}

impl From<JfiSetting> for JfiMode {
    fn from(s: JfiSetting) -> Self {
        match s {
            JfiSetting::Network => JfiMode::Network,
            JfiSetting::PerNode => JfiMode::PerNode,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipModeSetting {
    #[default]
    Fixed,
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub n_gnb: u32,
    pub n_ap: u32,
    pub n_pc1: u32,
    /// Defaults to `n_gnb - n_pc1`.
    pub n_pc3: Option<u32>,
    pub nru_protocol: String,
    pub wifi_protocol: String,
    pub cw_min: u32,
    pub cw_max: u32,
    pub tx_duration_us: u64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            n_gnb: 10,
            n_ap: 10,
            n_pc1: 0,
            n_pc3: None,
            nru_protocol: "gcr-lbt".into(),
            wifi_protocol: "edca".into(),
            cw_min: CW_MIN,
            cw_max: CW_MAX,
            tx_duration_us: TX_DURATION_US,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolParams {
    pub n_sl: usize,
    pub p_rs: f64,
    /// Post-success backoff when only NR-U runs the deterministic scheme.
    pub d_fixed: u32,
    /// Post-success backoff when both networks run it.
    pub d_fixed_both: u32,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self { n_sl: 3, p_rs: 0.5, d_fixed: 16, d_fixed_both: 64 }
    }
}

pub const PROTOCOL_NAMES: [&str; 9] = [
    "edca",
    "rs-lbt",
    "gap-lbt",
    "gap-lbt-desync",
    "cr-lbt",
    "ecr-lbt",
    "gcr-lbt",
    "db-lbt",
    "db-lbt-both",
];

impl ProtocolParams {
    pub fn protocol(&self, name: &str) -> Option<ProtocolKind> {
        Some(match name {
            "edca" => ProtocolKind::Edca,
            "rs-lbt" => ProtocolKind::RsLbt,
            "gap-lbt" => ProtocolKind::GapLbt { desync: false },
            "gap-lbt-desync" => ProtocolKind::GapLbt { desync: true },
            "cr-lbt" => ProtocolKind::CrLbt { n_sl: self.n_sl },
            "ecr-lbt" => ProtocolKind::EcrLbt { n_sl: self.n_sl },
            "gcr-lbt" => ProtocolKind::GcrLbt { n_sl: self.n_sl, p_rs: self.p_rs },
            "db-lbt" => ProtocolKind::DbLbt { d_fixed: self.d_fixed, both_networks: false },
            "db-lbt-both" => ProtocolKind::DbLbt { d_fixed: self.d_fixed_both, both_networks: true },
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub protocols: Vec<String>,
    /// Node counts per network; each run uses `n_gnb = n_ap = n`.
    pub n: Vec<u32>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            protocols: PROTOCOL_NAMES[1..].iter().map(|s| s.to_string()).collect(),
            n: (1..=15).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipSection {
    /// Skipping applied to single-scenario runs (compare, train, eval).
    pub mode: SkipModeSetting,
    pub fixed_level: u8,
    pub target_delay_us: f64,
    pub deescalate_factor: f64,
    /// Sweep: PC3 node counts, fixed levels and dynamic targets.
    pub k: Vec<u32>,
    pub levels: Vec<u8>,
    pub targets_us: Vec<f64>,
    pub n_pc1: u32,
    /// Add k Wi-Fi stations next to the k PC3 nodes.
    pub coexistence: bool,
}

impl Default for SkipSection {
    fn default() -> Self {
        Self {
            mode: SkipModeSetting::Fixed,
            fixed_level: 0,
            target_delay_us: 500.0,
            deescalate_factor: 0.5,
            k: (2..=15).collect(),
            levels: (0..=MAX_LEVEL).collect(),
            targets_us: vec![500.0, 1000.0],
            n_pc1: 1,
            coexistence: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnSection {
    pub alpha: Vec<f64>,
    /// PC3 nodes (and Wi-Fi stations) in the training scenario.
    pub k: u32,
    pub eval_k: Vec<u32>,
    pub n_pc1: u32,
    pub train_interactions: u64,
    pub interaction_period_us: u64,
    pub obs_periods: u32,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_fraction: f64,
    pub target_update: u64,
    /// Also emit untrained rows (protocol defaults, no agents) in eval mode.
    pub baseline: bool,
    pub checkpoint: Option<PathBuf>,
}

impl Default for DqnSection {
    fn default() -> Self {
        let p = DqnParams::default();
        Self {
            alpha: vec![0.5, 0.75, 1.0],
            k: 10,
            eval_k: vec![10],
            n_pc1: 1,
            train_interactions: 2000,
            interaction_period_us: 10_000,
            obs_periods: 1,
            gamma: p.gamma,
            lr: p.lr,
            batch_size: p.batch_size,
            replay_capacity: p.replay_capacity,
            eps_start: p.eps_start,
            eps_end: p.eps_end,
            eps_decay_fraction: p.eps_decay_fraction,
            target_update: p.target_update,
            baseline: true,
            checkpoint: None,
        }
    }
}

impl DqnSection {
    pub fn params(&self) -> DqnParams {
        DqnParams {
            gamma: self.gamma,
            lr: self.lr,
            batch_size: self.batch_size,
            replay_capacity: self.replay_capacity,
            eps_start: self.eps_start,
            eps_end: self.eps_end,
            eps_decay_fraction: self.eps_decay_fraction,
            target_update: self.target_update,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub mode: Option<Mode>,
    /// Seconds of simulated time per run.
    pub sim_time: f64,
    /// Base seed; run `i` uses `seed + i`.
    pub seed: u64,
    pub runs: u32,
    /// Worker threads; 0 uses every core.
    pub parallel: usize,
    pub jfi: JfiSetting,
    pub out: Option<PathBuf>,
    /// Directory receiving one event trace per run.
    pub trace: Option<PathBuf>,
    /// Also emit one row per window of this many microseconds.
    pub window_us: Option<u64>,
    pub scenario: ScenarioSection,
    pub protocols: ProtocolParams,
    pub compare: CompareSection,
    pub skip: SkipSection,
    pub dqn: DqnSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: None,
            sim_time: 10.0,
            seed: 1,
            runs: 10,
            parallel: 0,
            jfi: JfiSetting::Network,
            out: None,
            trace: None,
            window_us: None,
            scenario: ScenarioSection::default(),
            protocols: ProtocolParams::default(),
            compare: CompareSection::default(),
            skip: SkipSection::default(),
            dqn: DqnSection::default(),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.into_inner().message().trim().to_string();
        ConfigError::Parse { path, msg }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn check_protocol(
    params: &ProtocolParams,
    key: &'static str,
    name: &str,
) -> Result<ProtocolKind, ConfigError> {
    let p = params
        .protocol(name)
        .ok_or_else(|| invalid(key, format!("unknown protocol {name:?}; expected one of {PROTOCOL_NAMES:?}")))?;
    p.validate().map_err(|m| invalid("protocols", m))?;
    Ok(p)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.sim_time.is_finite() && self.sim_time > 0.0) {
            return Err(invalid("sim_time", "must be a positive number of seconds"));
        }
        if self.window_us == Some(0) {
            return Err(invalid("window_us", "must be positive"));
        }
        if self.runs == 0 {
            return Err(invalid("runs", "must be at least 1"));
        }
        let s = &self.scenario;
        if s.n_pc1 > s.n_gnb {
            return Err(invalid("scenario.n_pc1", format!("{} exceeds n_gnb = {}", s.n_pc1, s.n_gnb)));
        }
        if let Some(pc3) = s.n_pc3 {
            if s.n_pc1 + pc3 != s.n_gnb {
                return Err(invalid(
                    "scenario.n_pc3",
                    format!("n_pc1 + n_pc3 = {} but n_gnb = {}", s.n_pc1 + pc3, s.n_gnb),
                ));
            }
        }
        check_protocol(&self.protocols, "scenario.nru_protocol", &s.nru_protocol)?;
        check_protocol(&self.protocols, "scenario.wifi_protocol", &s.wifi_protocol)?;
        let probe = NodeConfig {
            id: NodeId(0),
            network: Network::Nru,
            protocol: ProtocolKind::Edca,
            priority: Priority::Pc3,
            cw_min: s.cw_min,
            cw_max: s.cw_max,
            tx_duration: s.tx_duration_us,
            lssb_offset: 0,
        };
        probe.validate().map_err(|m| invalid("scenario.cw_min", m))?;

        if self.compare.protocols.is_empty() {
            return Err(invalid("compare.protocols", "must not be empty"));
        }
        for p in &self.compare.protocols {
            check_protocol(&self.protocols, "compare.protocols", p)?;
        }
        if self.compare.n.is_empty() || self.compare.n.contains(&0) {
            return Err(invalid("compare.n", "must be a non-empty list of positive node counts"));
        }

        let k = &self.skip;
        if k.fixed_level > MAX_LEVEL {
            return Err(invalid("skip.fixed_level", format!("must be in 0..={MAX_LEVEL}")));
        }
        if !(k.target_delay_us > 0.0) {
            return Err(invalid("skip.target_delay_us", "must be positive"));
        }
        if !(0.0..=1.0).contains(&k.deescalate_factor) {
            return Err(invalid("skip.deescalate_factor", "must be in [0, 1]"));
        }
        if k.k.is_empty() {
            return Err(invalid("skip.k", "must not be empty"));
        }
        if k.levels.iter().any(|l| *l > MAX_LEVEL) {
            return Err(invalid("skip.levels", format!("levels must be in 0..={MAX_LEVEL}")));
        }
        if k.levels.is_empty() && k.targets_us.is_empty() {
            return Err(invalid("skip.levels", "no fixed levels and no dynamic targets to sweep"));
        }
        if k.targets_us.iter().any(|t| !(*t > 0.0)) {
            return Err(invalid("skip.targets_us", "targets must be positive"));
        }

        let d = &self.dqn;
        if d.alpha.is_empty() {
            return Err(invalid("dqn.alpha", "must not be empty"));
        }
        if d.alpha.iter().any(|a| !(0.5..=1.0).contains(a)) {
            return Err(invalid("dqn.alpha", "every α must lie in [0.5, 1]"));
        }
        if d.k == 0 || d.eval_k.is_empty() || d.eval_k.contains(&0) {
            return Err(invalid("dqn.k", "PC3 counts must be positive"));
        }
        if d.train_interactions == 0 {
            return Err(invalid("dqn.train_interactions", "must be at least 1"));
        }
        if d.interaction_period_us == 0 || d.obs_periods == 0 {
            return Err(invalid("dqn.interaction_period_us", "period and obs_periods must be positive"));
        }
        if !(0.0..1.0).contains(&d.gamma) {
            return Err(invalid("dqn.gamma", "must be in [0, 1)"));
        }
        if !(d.lr > 0.0) {
            return Err(invalid("dqn.lr", "must be positive"));
        }
        if d.batch_size == 0 || d.replay_capacity < d.batch_size {
            return Err(invalid("dqn.batch_size", "batch must be positive and fit in the replay buffer"));
        }
        if !(0.0..=1.0).contains(&d.eps_start) || !(0.0..=1.0).contains(&d.eps_end) {
            return Err(invalid("dqn.eps_start", "exploration rates must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&d.eps_decay_fraction) {
            return Err(invalid("dqn.eps_decay_fraction", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// Rejects configs that cannot serve `mode` and records it.
    pub fn for_mode(mut self, mode: Mode) -> Result<Self, ConfigError> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(invalid("mode", format!("config is for {m} but {mode} was requested")));
            }
        }
        if matches!(mode, Mode::Train | Mode::Eval) && self.dqn.checkpoint.is_none() {
            return Err(ConfigError::Missing { key: "dqn.checkpoint", mode });
        }
        self.mode = Some(mode);
        Ok(self)
    }

    pub fn sim_time(&self) -> SimTime {
        SimTime::from_secs_f64(self.sim_time)
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.runs as u64).map(|i| self.seed.wrapping_add(i))
    }

    pub fn skip_mode(&self) -> Option<SkipMode> {
        match self.skip.mode {
            SkipModeSetting::Fixed if self.skip.fixed_level == 0 => None,
            SkipModeSetting::Fixed => SkipLevel::new(self.skip.fixed_level).map(SkipMode::Fixed),
            SkipModeSetting::Dynamic => Some(SkipMode::Dynamic {
                target_delay_us: self.skip.target_delay_us,
                deescalate_factor: self.skip.deescalate_factor,
            }),
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialized config.
    /// Seeds, run counts and output locations are left out: a row's seed
    /// column together with this hash identifies the run.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.runs = 1;
        c.parallel = 0;
        c.out = None;
        c.trace = None;
        c.dqn.checkpoint = None;
        let canonical = toml::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn node_config(&self, id: u32, network: Network, protocol: ProtocolKind, priority: Priority) -> NodeConfig {
        NodeConfig {
            id: NodeId(id),
            network,
            protocol,
            priority,
            cw_min: self.scenario.cw_min,
            cw_max: self.scenario.cw_max,
            tx_duration: self.scenario.tx_duration_us,
            lssb_offset: 0,
        }
    }

    /// `n_pc1` PC1 gNBs, `n_pc3` PC3 gNBs and `n_wifi` stations, ids in that
    /// order.
    pub fn build_scenario(
        &self,
        nru: ProtocolKind,
        wifi: ProtocolKind,
        n_pc1: u32,
        n_pc3: u32,
        n_wifi: u32,
        seed: u64,
    ) -> Scenario {
        let mut nodes = Vec::new();
        let mut id = 0;
        for (count, network, protocol, priority) in [
            (n_pc1, Network::Nru, nru, Priority::Pc1),
            (n_pc3, Network::Nru, nru, Priority::Pc3),
            (n_wifi, Network::WiFi, wifi, Priority::WiFiBe),
        ] {
            for _ in 0..count {
                nodes.push(self.node_config(id, network, protocol, priority));
                id += 1;
            }
        }
        Scenario {
            nodes,
            sim_time: self.sim_time(),
            seed,
            skip: self.skip_mode(),
            interaction_period: None,
        }
    }

    /// Wi-Fi protocol to pair with an NR-U roster entry.
    pub fn wifi_for(&self, nru_name: &str) -> ProtocolKind {
        match nru_name {
            "db-lbt-both" => self.protocols.protocol(nru_name),
            _ => self.protocols.protocol(&self.scenario.wifi_protocol),
        }
        .expect("validated")
    }
}
