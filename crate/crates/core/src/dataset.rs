//! Loading and validation of scenario datasets in the canonical JSON format.
//!
//! ```json
//! {"id": "...", "domain": "...", "scenarios": [
//!   {"id": "...", "context": "...", "question": "...",
//!    "choices": [{"text": "...", "meta": {"k": "v"}}],
//!    "labels": {"attribute=value": [0, 2]}}
//! ]}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{Choice, Scenario};
use crate::registry::{AttributeRegistry, RegistryError};

/// A problem found while validating a scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Scenario id when it could be read, otherwise its position in the file.
    pub scenario: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scenario {}: {}", self.scenario, self.message)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("JSON parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dataset failed validation:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub id: String,
    pub domain: String,
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioSummary {
    pub id: String,
    pub question: String,
    pub num_choices: usize,
    pub label_keys: Vec<String>,
}

impl Dataset {
    /// Attribute ids referenced by any label, i.e. the registry subset in use.
    pub fn attributes(&self, registry: &AttributeRegistry) -> BTreeSet<String> {
        self.scenarios
            .iter()
            .flat_map(|s| s.labels.keys())
            .filter_map(|k| registry.parse_key(k).ok())
            .map(|t| t.attribute)
            .collect()
    }

    /// Every label key carried by at least one scenario, sorted.
    pub fn label_keys(&self) -> BTreeSet<String> {
        self.scenarios
            .iter()
            .flat_map(|s| s.labels.keys().cloned())
            .collect()
    }

    pub fn scenario(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    /// Scenarios in file order, optionally restricted to those labelled for `filter`.
    pub fn list_scenarios(
        &self,
        registry: &AttributeRegistry,
        filter: Option<&str>,
    ) -> Result<Vec<ScenarioSummary>, RegistryError> {
        Ok(self
            .filtered(registry, filter)?
            .into_iter()
            .map(|s| ScenarioSummary {
                id: s.id.clone(),
                question: s.question.clone(),
                num_choices: s.num_choices(),
                label_keys: s.labels.keys().cloned().collect(),
            })
            .collect())
    }

    pub fn filtered(
        &self,
        registry: &AttributeRegistry,
        filter: Option<&str>,
    ) -> Result<Vec<&Scenario>, RegistryError> {
        let key = filter.map(|f| registry.canonicalize_key(f)).transpose()?;
        Ok(self
            .scenarios
            .iter()
            .filter(|s| key.as_ref().is_none_or(|k| s.labels.contains_key(k)))
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }
}

pub fn load_dataset(path: &Path, registry: &AttributeRegistry) -> Result<Dataset, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&bytes, registry)
}

/// Parse and fully validate dataset bytes. Pure function of the input.
pub fn parse_dataset(bytes: &[u8], registry: &AttributeRegistry) -> Result<Dataset, DatasetError> {
    let root: Value = serde_json::from_slice(bytes).map_err(|e| DatasetError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut violations = Vec::new();
    let top = |msg: &str| Violation {
        scenario: "<dataset>".into(),
        message: msg.into(),
    };
    let Some(obj) = root.as_object() else {
        return Err(DatasetError::Validation(vec![top(
            "top level must be a JSON object",
        )]));
    };
    let id = obj.get("id").and_then(Value::as_str).unwrap_or_default();
    if id.is_empty() {
        violations.push(top("missing or empty field `id`"));
    }
    let domain = obj.get("domain").and_then(Value::as_str).unwrap_or_default();
    let raw_scenarios = match obj.get("scenarios") {
        Some(Value::Array(items)) => items.as_slice(),
        _ => {
            violations.push(top("missing field `scenarios` (array)"));
            &[]
        }
    };

    let mut scenarios = Vec::with_capacity(raw_scenarios.len());
    let mut seen = BTreeMap::new();
    for (pos, raw) in raw_scenarios.iter().enumerate() {
        let name = raw
            .get("id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("#{pos}"));
        if let Some(first) = seen.insert(name.clone(), pos) {
            violations.push(Violation {
                scenario: name.clone(),
                message: format!("duplicate id (first seen at position {first})"),
            });
        }
        match validate_scenario(raw, registry) {
            Ok(mut s) => {
                if s.domain.is_empty() {
                    s.domain = domain.to_string();
                }
                scenarios.push(s);
            }
            Err(errs) => violations.extend(errs.into_iter().map(|message| Violation {
                scenario: name.clone(),
                message,
            })),
        }
    }

    if !violations.is_empty() {
        return Err(DatasetError::Validation(violations));
    }
    Ok(Dataset {
        id: id.to_string(),
        domain: domain.to_string(),
        scenarios,
    })
}

/// Validate one raw scenario object, reporting every violation found.
/// Label keys are rewritten to canonical form.
pub fn validate_scenario(raw: &Value, registry: &AttributeRegistry) -> Result<Scenario, Vec<String>> {
    let mut errs = Vec::new();
    let Some(obj) = raw.as_object() else {
        return Err(vec!["scenario must be a JSON object".into()]);
    };

    let mut string_field = |name: &str, required: bool| -> String {
        match obj.get(name) {
            Some(Value::String(s)) => s.clone(),
            None if !required => String::new(),
            None => {
                errs.push(format!("missing field `{name}`"));
                String::new()
            }
            Some(_) => {
                errs.push(format!("field `{name}` must be a string"));
                String::new()
            }
        }
    };
    let id = string_field("id", true);
    let question = string_field("question", true);
    let context = string_field("context", false);
    let domain = string_field("domain", false);
    if obj.contains_key("id") && id.is_empty() {
        errs.push("field `id` must be non-empty".into());
    }

    let mut choices = Vec::new();
    match obj.get("choices") {
        None => errs.push("missing field `choices`".into()),
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                match serde_json::from_value::<Choice>(item.clone()) {
                    Ok(mut c) => {
                        if c.text.trim().is_empty() {
                            errs.push(format!("choice {i} has empty text"));
                        }
                        c.index = i;
                        choices.push(c);
                    }
                    Err(e) => errs.push(format!("choice {i} is malformed: {e}")),
                }
            }
            if items.len() < 2 {
                errs.push(format!(
                    "choices.length >= 2 violated (found {})",
                    items.len()
                ));
            }
        }
        Some(_) => errs.push("field `choices` must be an array".into()),
    }

    let mut labels = BTreeMap::new();
    match obj.get("labels") {
        None => {}
        Some(Value::Object(map)) => {
            for (key, indices) in map {
                let canonical = match registry.canonicalize_key(key) {
                    Ok(k) => k,
                    Err(e) => {
                        errs.push(format!("label `{key}`: {e}"));
                        continue;
                    }
                };
                let Some(items) = indices.as_array() else {
                    errs.push(format!("label `{key}` must be an array of choice indices"));
                    continue;
                };
                let mut set = BTreeSet::new();
                for v in items {
                    match v.as_u64() {
                        Some(i) if (i as usize) < choices.len() => {
                            set.insert(i as usize);
                        }
                        Some(i) => errs.push(format!(
                            "label `{key}` index {i} out of range (choices.length = {})",
                            choices.len()
                        )),
                        None => errs.push(format!("label `{key}` contains non-index value {v}")),
                    }
                }
                if labels.insert(canonical.clone(), set).is_some() {
                    errs.push(format!("label `{key}` duplicates key `{canonical}`"));
                }
            }
        }
        Some(_) => errs.push("field `labels` must be an object".into()),
    }

    if !errs.is_empty() {
        return Err(errs);
    }
    Ok(Scenario {
        id,
        domain,
        context,
        question,
        choices,
        labels,
    })
}
