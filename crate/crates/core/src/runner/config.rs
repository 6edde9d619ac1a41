//! Experiment configuration files and dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adm::AdmSpec;
use crate::model::AttributeTarget;

pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub dataset: PathBuf,
    pub adm: AdmSpec,
    #[serde(default)]
    pub target: Option<AttributeTarget>,
    /// Only run scenarios carrying a label for this attribute key.
    #[serde(default)]
    pub filter: Option<String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub output: PathBuf,
    /// Extra prompt templates layered over the bundled ones.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    /// Replacement attribute registry.
    #[serde(default)]
    pub attributes: Option<PathBuf>,
}

fn default_parallelism() -> usize {
    DEFAULT_PARALLELISM
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("malformed override `{0}`; expected path=value")]
    MalformedOverride(String),
    #[error("unknown config path `{0}`")]
    UnknownPath(String),
    #[error("type mismatch at `{path}`: expected {expected}, got `{got}`")]
    TypeMismatch {
        path: String,
        expected: &'static str,
        got: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    /// SHA-256 over the canonical JSON of the resolved config.
    pub fn digest(&self) -> String {
        config_digest(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run_id.trim().is_empty() {
            return Err(ConfigError::Invalid("run_id must be non-empty".into()));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be positive".into()));
        }
        Ok(())
    }
}

pub fn config_digest<T: Serialize>(config: &T) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn parse_text(text: &str, is_toml: bool) -> Result<Value, ConfigError> {
    if is_toml {
        let v: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        serde_json::to_value(v).map_err(|e| ConfigError::Parse(e.to_string()))
    } else {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }
}

fn decode(value: Value) -> Result<ExperimentConfig, ConfigError> {
    serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("unknown field `") {
            Some(rest) => ConfigError::UnknownPath(rest.split('`').next().unwrap_or(rest).to_string()),
            None => ConfigError::Invalid(msg),
        }
    })
}

/// Load a JSON or TOML config file (by extension) and apply overrides.
pub fn resolve_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    resolve_config_str(&text, is_toml, overrides)
}

pub fn resolve_config_str(text: &str, is_toml: bool, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let base = decode(parse_text(text, is_toml)?)?;
    // Round-trip so every field, including absent optionals, exists as a path.
    let mut tree = serde_json::to_value(&base).expect("config serializes");
    for ov in overrides {
        apply_override(&mut tree, ov)?;
    }
    let cfg = decode(tree)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Apply one `dotted.path=value` override to a JSON tree. The path must exist,
/// except below a field that is currently null, where objects are created and
/// the final decode rejects unknown names.
pub fn apply_override(tree: &mut Value, override_arg: &str) -> Result<(), ConfigError> {
    let (path, raw) = override_arg
        .split_once('=')
        .ok_or_else(|| ConfigError::MalformedOverride(override_arg.to_string()))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(ConfigError::MalformedOverride(override_arg.to_string()));
    }
    let segments: Vec<&str> = path.split('.').collect();
    let mut node = tree;
    let mut creating = false;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if node.is_null() {
            *node = Value::Object(Map::new());
            creating = true;
        }
        let Value::Object(map) = node else {
            return Err(ConfigError::UnknownPath(path.to_string()));
        };
        if !map.contains_key(*seg) {
            if !creating {
                return Err(ConfigError::UnknownPath(path.to_string()));
            }
            map.insert(seg.to_string(), Value::Null);
        }
        let child = map.get_mut(*seg).expect("inserted above");
        if last {
            *child = coerce(path, child, raw)?;
            return Ok(());
        }
        node = child;
    }
    unreachable!("path has at least one segment")
}

fn coerce(path: &str, existing: &Value, raw: &str) -> Result<Value, ConfigError> {
    let parsed = serde_json::from_str::<Value>(raw).ok();
    let mismatch = |expected| ConfigError::TypeMismatch {
        path: path.to_string(),
        expected,
        got: raw.to_string(),
    };
    if raw.trim() == "null" {
        return Ok(Value::Null);
    }
    Ok(match existing {
        Value::String(_) => Value::String(raw.to_string()),
        Value::Number(_) => match parsed {
            Some(v @ Value::Number(_)) => v,
            _ => return Err(mismatch("a number")),
        },
        Value::Bool(_) => match parsed {
            Some(v @ Value::Bool(_)) => v,
            _ => return Err(mismatch("a boolean")),
        },
        Value::Array(_) => match parsed {
            Some(v @ Value::Array(_)) => v,
            _ => return Err(mismatch("a JSON array")),
        },
        Value::Object(_) => match parsed {
            Some(v @ Value::Object(_)) => v,
            _ => return Err(mismatch("a JSON object")),
        },
        Value::Null => parsed.unwrap_or_else(|| Value::String(raw.to_string())),
    })
}
