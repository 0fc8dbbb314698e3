//! Run configuration.
//!
//! Files are either JSON (the canonical form, see [`RunConfig::to_json`])
//! or flat `key = value` lines with dotted keys such as `train.lr = 3e-3`.
//! `--set key=value` overrides use the same keys and are applied after the
//! file. Values parse as JSON where possible and as bare strings otherwise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::adapter::AdapterConfig;
use crate::backbone::{BackboneConfig, Placement};
use crate::error::{Error, Result};
use crate::tasks::{Rule, TaskSpec};
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "TINYATTN_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterSettings {
    pub heads: usize,
    pub head_dim: usize,
    pub with_biases: bool,
    pub placement: Placement,
    /// Init bound of the output projection, relative to `1/√D`.
    pub output_scale: f64,
    /// Noise added when a multi-head adapter is derived from a trained
    /// single-head one.
    pub init_eps: f64,
    /// `eval` only: score the head-averaged adapter instead of the stored one.
    pub head_average: bool,
}

impl Default for AdapterSettings {
    fn default() -> Self {
        let a = AdapterConfig::default();
        Self {
            heads: a.heads,
            head_dim: a.head_dim,
            with_biases: a.with_biases,
            placement: Placement::Sequential,
            output_scale: 0.01,
            init_eps: 1e-3,
            head_average: false,
        }
    }
}

impl AdapterSettings {
    pub fn config(&self) -> AdapterConfig {
        AdapterConfig {
            heads: self.heads,
            head_dim: self.head_dim,
            with_biases: self.with_biases,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub backbone: BackboneConfig,
    pub adapter: AdapterSettings,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::new(Rule::PretrainNextset, 0),
            backbone: BackboneConfig::default(),
            adapter: AdapterSettings::default(),
            train: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Interprets a raw value: JSON literal if it parses, string otherwise.
fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets dotted `key` in `root`, refusing keys the default config lacks.
fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_err(format!("`{}` is not a section", parts[..i].join("."))))?;
        let slot = obj.get_mut(*part).ok_or_else(|| config_err(format!("unknown key `{key}`")))?;
        if i + 1 == parts.len() {
            if slot.is_object() {
                return Err(config_err(format!("`{key}` is a section, not a value")));
            }
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}

fn flatten(prefix: &str, value: &Map<String, Value>, out: &mut Vec<(String, Value)>) {
    for (k, v) in value {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(m) => flatten(&key, m, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// `(key, value)` pairs of a config file, JSON or flat.
pub fn parse_entries(text: &str) -> Result<Vec<(String, Value)>> {
    if text.trim_start().starts_with('{') {
        let value: Value = serde_json::from_str(text).map_err(|e| config_err(format!("invalid JSON: {e}")))?;
        let mut out = Vec::new();
        flatten("", value.as_object().expect("starts with `{`"), &mut out);
        return Ok(out);
    }
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), parse_value(v)));
    }
    Ok(out)
}

/// Parses one `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), parse_value(v)))
}

impl RunConfig {
    /// Defaults, then `entries` in order (later keys win).
    pub fn from_entries(entries: &[(String, Value)]) -> Result<Self> {
        let mut root = serde_json::to_value(Self::default()).expect("config serializes");
        for (k, v) in entries {
            set_path(&mut root, k, v.clone())?;
        }
        serde_json::from_value(root).map_err(|e| config_err(e.to_string()))
    }

    /// Reads `path` (if any), applies `overrides` and finally the seed
    /// from `TINYATTN_SEED` when that variable is set.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut entries = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                parse_entries(&text)?
            }
            None => Vec::new(),
        };
        for o in overrides {
            entries.push(parse_override(o)?);
        }
        let mut config = Self::from_entries(&entries)?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            config.train.seed = seed
                .trim()
                .parse()
                .map_err(|_| config_err(format!("{SEED_ENV}=`{seed}` is not an unsigned integer")))?;
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that does not depend on the command.
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.task.validate()?;
        self.train.validate()?;
        self.adapter.config().validate()?;
        if self.adapter.placement == Placement::None {
            return Err(config_err("adapter.placement must be `sequential` or `parallel`"));
        }
        if !(self.adapter.output_scale.is_finite() && self.adapter.init_eps.is_finite() && self.adapter.init_eps >= 0.0) {
            return Err(config_err("adapter.output_scale and adapter.init_eps must be finite, init_eps ≥ 0"));
        }
        if let Some(p) = &self.paths.checkpoint_in {
            if !p.is_file() {
                return Err(config_err(format!("input checkpoint `{}` does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// The task must fit the backbone it runs on.
    pub fn check_task_fits(&self, backbone: &BackboneConfig) -> Result<()> {
        if self.task.vocab > backbone.vocab {
            return Err(config_err(format!(
                "task vocab {} exceeds backbone vocab {}",
                self.task.vocab, backbone.vocab
            )));
        }
        if self.task.seq_len + 1 > backbone.max_len {
            return Err(config_err(format!(
                "task sequences of {} ids exceed backbone max_len {}",
                self.task.seq_len + 1,
                backbone.max_len
            )));
        }
        Ok(())
    }
}
