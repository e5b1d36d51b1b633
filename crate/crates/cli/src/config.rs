//! Run configuration: an INI-style file of `key = value` lines grouped in
//! `[sections]`, overlaid with command-line settings. Every section is
//! deserialized into a typed struct that rejects unknown keys.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use ini::{Ini, ParseOption};
use nas_asr::audio::FrontendConfig;
use nas_asr::lm::Smoothing;
use nas_asr::nas::{ControllerConfig, SearchSpace, TrainConfig};
use nas_asr::nn::OptimizerConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SEED_ENV: &str = "NAS_ASR_SEED";

/// A usage or configuration problem; reported with exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

const SECTIONS: &[&str] = &[
    "", "data", "frontend", "space", "controller", "train", "optimizer", "search", "decoder", "lm",
];

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct General {
    seed: Option<u64>,
    workers: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Directory of `<id>.feat` caches written by `extract`.
    pub features: Option<PathBuf>,
}

impl DataConfig {
    fn require<'a>(key: &str, value: &'a Option<PathBuf>) -> anyhow::Result<&'a Path> {
        let path = value
            .as_deref()
            .ok_or_else(|| config_error(format!("missing required key data.{key}")))?;
        if !path.is_file() {
            return Err(config_error(format!("data.{key}: {} does not exist", path.display())));
        }
        Ok(path)
    }

    pub fn train(&self) -> anyhow::Result<&Path> {
        Self::require("train", &self.train)
    }

    pub fn dev(&self) -> anyhow::Result<&Path> {
        Self::require("dev", &self.dev)
    }

    pub fn test(&self) -> anyhow::Result<Option<&Path>> {
        self.test.as_ref().map(|_| Self::require("test", &self.test)).transpose()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub budget: usize,
    pub batch_size: usize,
    /// Reward scale applied to `1 - WER`.
    pub gamma: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            budget: 1024,
            batch_size: 8,
            gamma: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSection {
    pub beam_width: usize,
    pub alpha: f64,
    pub beta: f64,
    /// ARPA language model used for shallow fusion.
    pub lm: Option<PathBuf>,
    pub top_k: usize,
}

impl Default for DecoderSection {
    fn default() -> Self {
        DecoderSection {
            beam_width: 128,
            alpha: 0.0,
            beta: 0.0,
            lm: None,
            top_k: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub order: usize,
    pub smoothing: Smoothing,
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection {
            order: 3,
            smoothing: Smoothing::WittenBell,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub data: DataConfig,
    pub frontend: FrontendConfig,
    pub space: SearchSpace,
    pub controller: ControllerConfig,
    pub train: TrainConfig,
    pub search: SearchSection,
    pub decoder: DecoderSection,
    pub lm: LmSection,
}

/// Raw `section.key = value` settings; later assignments win. Keys in the
/// file preamble (before any section header) have an empty section.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<(String, String), String>,
}

impl Settings {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let opt = ParseOption {
            enabled_escape: false,
            ..Default::default()
        };
        let ini = Ini::load_from_file_opt(path, opt)
            .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let mut settings = Settings::default();
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                settings.insert(section.unwrap_or(""), key, value);
            }
        }
        Ok(settings)
    }

    fn insert(&mut self, section: &str, key: &str, value: &str) {
        self.values
            .insert((section.trim().to_string(), key.trim().to_string()), value.trim().to_string());
    }

    /// Sets `section.key` (or a preamble `key`).
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let (section, key) = key.split_once('.').unwrap_or(("", key));
        self.insert(section, key, &value.to_string());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// Applies a `section.key=value` assignment from the command line.
    pub fn assign(&mut self, assignment: &str) -> anyhow::Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| config_error(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
        self.set(key.trim(), value);
        Ok(())
    }

    /// Deserializes one section. A scalar given for a list-valued key (as
    /// seen in the section's defaults) becomes a one-element list.
    fn section<T: DeserializeOwned + Serialize + Default>(&self, name: &str) -> anyhow::Result<T> {
        let defaults = serde_json::to_value(T::default())?;
        let map: Map<String, Value> = self
            .values
            .iter()
            .filter(|((s, _), _)| s == name)
            .map(|((_, k), v)| {
                let v = match (to_value(v), defaults.get(k)) {
                    (v @ (Value::Number(_) | Value::String(_) | Value::Bool(_)), Some(Value::Array(_))) => {
                        Value::Array(vec![v])
                    }
                    (v, _) => v,
                };
                (k.clone(), v)
            })
            .collect();
        serde_json::from_value(Value::Object(map)).map_err(|e| {
            let at = if name.is_empty() { "top level".to_string() } else { format!("[{name}]") };
            config_error(format!("{at}: {e}"))
        })
    }

    /// Validates every key against the schema and builds the typed config.
    /// The seed falls back to `NAS_ASR_SEED`, then 0.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        if let Some((s, k)) = self.values.keys().find(|(s, _)| !SECTIONS.contains(&s.as_str())) {
            return Err(config_error(format!("unknown section [{s}] (key {k:?})")));
        }
        let general: General = self.section("")?;
        let seed = match general.seed {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| config_error(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
                Err(_) => 0,
            },
        };
        let optimizer: OptimizerConfig = self.section("optimizer")?;
        let train = TrainConfig {
            optimizer,
            ..self.section("train")?
        };
        let cfg = RunConfig {
            seed,
            workers: general.workers.unwrap_or(1),
            data: self.section("data")?,
            frontend: self.section("frontend")?,
            space: self.section("space")?,
            controller: self.section("controller")?,
            train,
            search: self.section("search")?,
            decoder: self.section("decoder")?,
            lm: self.section("lm")?,
        };
        let check = |what: &str, r: nas_asr::Result<()>| r.map_err(|e| config_error(format!("[{what}] {e}")));
        check("frontend", cfg.frontend.validate())?;
        check("space", cfg.space.validate())?;
        check("controller", cfg.controller.validate())?;
        check("optimizer", cfg.train.optimizer.validate())?;
        if cfg.workers == 0 {
            return Err(config_error("workers must be at least 1"));
        }
        Ok(cfg)
    }
}

/// Interprets a raw value: numbers, booleans and JSON arrays as such,
/// comma-separated lists as arrays, an empty value as unset, anything
/// else as a string.
fn to_value(raw: &str) -> Value {
    let raw = raw.trim();
    if raw.is_empty() {
        Value::Null
    } else if raw.contains(',') && !raw.starts_with('[') {
        Value::Array(raw.split(',').map(scalar).collect())
    } else {
        scalar(raw)
    }
}

fn scalar(raw: &str) -> Value {
    let raw = raw.trim();
    match serde_json::from_str::<Value>(raw) {
        Ok(Value::Object(_)) | Err(_) => Value::String(raw.to_string()),
        Ok(v) => v,
    }
}
