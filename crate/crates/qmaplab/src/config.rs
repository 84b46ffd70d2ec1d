//! Flat `key = value` run configuration with CLI overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dqn::DqnConfig;
use crate::env::EnvConfig;
use crate::explore::ExplorerConfig;
use crate::qmap::{QMapBackendKind, QMapConfig};
use crate::replay::ReplayConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {0}: expected `key = value`")]
    BadLine(usize),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}` as {want}")]
    BadValue { key: String, value: String, want: &'static str },
    #[error("config invariant violated: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    QmapDqn,
    DqnBaseline,
    QmapWalk,
    RandomWalk,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::QmapDqn => "qmap_dqn",
            RunMode::DqnBaseline => "dqn_baseline",
            RunMode::QmapWalk => "qmap_walk",
            RunMode::RandomWalk => "random_walk",
        }
    }
}

/// Channel/hidden presets for the conv encoders.
fn arch_preset(name: &str) -> Option<((usize, usize, usize), usize)> {
    match name {
        "micro" => Some(((2, 4, 4), 16)),
        "tiny" => Some(((4, 8, 8), 32)),
        "small" => Some(((8, 16, 16), 64)),
        "paper" => Some(((32, 64, 64), 512)),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub level_path: PathBuf,
    pub mode: RunMode,
    pub seed: u64,
    pub total_steps: u64,
    pub learning_starts: u64,
    pub act_starts: u64,
    pub train_interval: u64,
    pub batch_size: usize,
    pub sync_period: u64,
    pub log_interval: u64,
    pub env: EnvConfig,
    pub replay: ReplayConfig,
    pub replay_beta0: f64,
    pub replay_beta1: f64,
    pub qmap: QMapConfig,
    pub dqn: DqnConfig,
    pub explorer: ExplorerConfig,
    pub emit_ground_truth: bool,
    pub write_decision_log: bool,
    pub explore_seeds: u64,
    pub oracle_goal: Option<(usize, usize)>,
    raw: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            level_path: PathBuf::from("level.lvl"),
            mode: RunMode::QmapDqn,
            seed: 0,
            total_steps: 50_000,
            learning_starts: 1000,
            act_starts: 2000,
            train_interval: 4,
            batch_size: 32,
            sync_period: 1000,
            log_interval: 100,
            env: EnvConfig::default(),
            replay: ReplayConfig::default(),
            replay_beta0: 0.4,
            replay_beta1: 1.0,
            qmap: QMapConfig::default(),
            dqn: DqnConfig::default(),
            explorer: ExplorerConfig::default(),
            emit_ground_truth: true,
            write_decision_log: false,
            explore_seeds: 10,
            oracle_goal: None,
            raw: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    /// Reads a config file, then applies `key=value` overrides in order.
    pub fn load(path: &Path, sets: &[String], seed: Option<u64>) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut map = parse_flat(&text)?;
        for set in sets {
            let (k, v) = set
                .split_once('=')
                .ok_or_else(|| ConfigError::UnknownKey(set.clone()))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = Self::from_map(map)?;
        if let Some(seed) = seed {
            cfg.seed = seed;
            cfg.raw.insert("seed".into(), seed.to_string());
        }
        // level paths resolve relative to the config file
        if cfg.level_path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.level_path = dir.join(&cfg.level_path);
            }
        }
        Ok(cfg)
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig { raw: map.clone(), ..RunConfig::default() };
        for (key, value) in &map {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sorted `key = value` echo of everything that was explicitly set.
    pub fn raw_pairs(&self) -> &BTreeMap<String, String> {
        &self.raw
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.apply(key, value)?;
        self.raw.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str, want: &'static str) -> Result<T, ConfigError> {
            value.parse::<T>().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                want,
            })
        }
        match key {
            "level" => self.level_path = PathBuf::from(value),
            "mode" => {
                self.mode = match value {
                    "qmap_dqn" => RunMode::QmapDqn,
                    "dqn_baseline" => RunMode::DqnBaseline,
                    "qmap_walk" => RunMode::QmapWalk,
                    "random_walk" => RunMode::RandomWalk,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            want: "qmap_dqn|dqn_baseline|qmap_walk|random_walk",
                        })
                    }
                }
            }
            "seed" => self.seed = parse(key, value, "u64")?,
            "total_steps" => self.total_steps = parse(key, value, "u64")?,
            "learning_starts" => self.learning_starts = parse(key, value, "u64")?,
            "act_starts" => self.act_starts = parse(key, value, "u64")?,
            "train_interval" => self.train_interval = parse(key, value, "u64")?,
            "batch_size" => self.batch_size = parse(key, value, "usize")?,
            "sync_period" => self.sync_period = parse(key, value, "u64")?,
            "log_interval" => self.log_interval = parse(key, value, "u64")?,
            "px_per_cell" => self.env.px_per_cell = parse(key, value, "usize")?,
            "rho" => self.env.rho = parse(key, value, "usize")?,
            "frame_stack" => self.env.frame_stack = parse(key, value, "usize")?,
            "scroll_margin" => self.env.scroll_margin = Some(parse(key, value, "usize")?),
            "right_only_scroll" => self.env.right_only_scroll = parse(key, value, "bool")?,
            "replay_capacity" => self.replay.capacity = parse(key, value, "usize")?,
            "replay_alpha" => self.replay.alpha = parse(key, value, "f64")?,
            "replay_floor" => self.replay.floor = parse(key, value, "f64")?,
            "replay_beta0" => self.replay_beta0 = parse(key, value, "f64")?,
            "replay_beta1" => self.replay_beta1 = parse(key, value, "f64")?,
            "qmap_gamma" => self.qmap.gamma = parse(key, value, "f64")?,
            "qmap_backend" => {
                self.qmap.backend = match value {
                    "tabular" => QMapBackendKind::Tabular,
                    "neural" => QMapBackendKind::Neural,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            want: "tabular|neural",
                        })
                    }
                }
            }
            "qmap_lr" => self.qmap.lr = parse(key, value, "f64")?,
            "qmap_double_q" => self.qmap.double_q = parse(key, value, "bool")?,
            "qmap_step_size" => self.qmap.tabular_step_size = parse(key, value, "f64")?,
            "qmap_arch" => {
                let (ch, hidden) = arch_preset(value).ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    want: "micro|tiny|small|paper",
                })?;
                self.qmap.channels = ch;
                self.qmap.hidden = hidden;
            }
            "dqn_gamma" => self.dqn.gamma = parse(key, value, "f64")?,
            "dqn_dueling" => self.dqn.dueling = parse(key, value, "bool")?,
            "dqn_lr" => self.dqn.lr = parse(key, value, "f64")?,
            "dqn_huber" => self.dqn.huber = parse(key, value, "bool")?,
            "dqn_arch" => {
                let (ch, hidden) = arch_preset(value).ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    want: "micro|tiny|small|paper",
                })?;
                self.dqn.channels = ch;
                self.dqn.hidden = hidden;
            }
            "p_random_start" => self.explorer.p_random_start = parse(key, value, "f64")?,
            "p_random_end" => self.explorer.p_random_end = parse(key, value, "f64")?,
            "p_bias" => self.explorer.p_bias = parse(key, value, "f64")?,
            "goal_steps_min" => self.explorer.goal_steps_min = parse(key, value, "u32")?,
            "goal_steps_max" => self.explorer.goal_steps_max = parse(key, value, "u32")?,
            "budget_supplement" => self.explorer.budget_supplement = parse(key, value, "f64")?,
            "ema_decay" => self.explorer.ema_decay = parse(key, value, "f64")?,
            "controller_gain" => self.explorer.gain = parse(key, value, "f64")?,
            "p_goal_init" => self.explorer.p_goal_init = parse(key, value, "f64")?,
            "p_goal_frozen" => self.explorer.p_goal_frozen = parse(key, value, "bool")?,
            "greedy_end" => self.explorer.greedy_end = parse(key, value, "f64")?,
            "schedule_fraction" => self.explorer.schedule_fraction = parse(key, value, "f64")?,
            "emit_ground_truth" => self.emit_ground_truth = parse(key, value, "bool")?,
            "write_decision_log" => self.write_decision_log = parse(key, value, "bool")?,
            "explore_seeds" => self.explore_seeds = parse(key, value, "u64")?,
            "oracle_goal" => {
                let (c, r) = value.split_once(',').ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    want: "col,row",
                })?;
                self.oracle_goal = Some((
                    parse(key, c.trim(), "usize")?,
                    parse(key, r.trim(), "usize")?,
                ));
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.act_starts < self.learning_starts {
            return Err(ConfigError::Invalid(format!(
                "act_starts {} < learning_starts {}",
                self.act_starts, self.learning_starts
            )));
        }
        if self.train_interval == 0 || self.sync_period == 0 || self.log_interval == 0 {
            return Err(ConfigError::Invalid("periods must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > self.replay.capacity {
            return Err(ConfigError::Invalid("batch_size must be in 1..=replay_capacity".into()));
        }
        if !(0.0 < self.qmap.gamma && self.qmap.gamma < 1.0) {
            return Err(ConfigError::Invalid("qmap_gamma must be in (0,1)".into()));
        }
        if !(0.0 < self.dqn.gamma && self.dqn.gamma < 1.0) {
            return Err(ConfigError::Invalid("dqn_gamma must be in (0,1)".into()));
        }
        if self.explorer.goal_steps_min < 1 || self.explorer.goal_steps_max < self.explorer.goal_steps_min {
            return Err(ConfigError::Invalid("goal step range must satisfy 1 <= min <= max".into()));
        }
        Ok(())
    }
}

fn parse_flat(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::BadLine(i + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_text_with_comments() {
        let map = parse_flat("# comment\nmode = qmap_walk\n\ntotal_steps = 123 # trailing\n").unwrap();
        assert_eq!(map["mode"], "qmap_walk");
        assert_eq!(map["total_steps"], "123");
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut map = BTreeMap::new();
        map.insert("not_a_key".to_string(), "1".to_string());
        assert!(matches!(RunConfig::from_map(map).unwrap_err(), ConfigError::UnknownKey(_)));
        let mut map = BTreeMap::new();
        map.insert("total_steps".to_string(), "lots".to_string());
        assert!(matches!(RunConfig::from_map(map).unwrap_err(), ConfigError::BadValue { .. }));
    }

    #[test]
    fn invariants_are_enforced() {
        let mut map = BTreeMap::new();
        map.insert("act_starts".to_string(), "10".to_string());
        map.insert("learning_starts".to_string(), "100".to_string());
        assert!(matches!(RunConfig::from_map(map).unwrap_err(), ConfigError::Invalid(_)));
    }

    #[test]
    fn typed_fields_round_trip() {
        let mut map = BTreeMap::new();
        map.insert("mode".to_string(), "dqn_baseline".to_string());
        map.insert("qmap_backend".to_string(), "neural".to_string());
        map.insert("qmap_arch".to_string(), "paper".to_string());
        map.insert("oracle_goal".to_string(), "30,4".to_string());
        let cfg = RunConfig::from_map(map).unwrap();
        assert_eq!(cfg.mode, RunMode::DqnBaseline);
        assert_eq!(cfg.qmap.hidden, 512);
        assert_eq!(cfg.oracle_goal, Some((30, 4)));
    }
}
