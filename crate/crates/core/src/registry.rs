//! Attribute registry: the set of attributes, and their allowed values, that
//! scenarios can be labelled with and decision-makers can be aligned to.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AttributeTarget;

const BUNDLED: &str = include_str!("../data/attributes.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("value `{value}` is not allowed for attribute `{attribute}` (allowed: {allowed})")]
    UnknownValue {
        attribute: String,
        value: String,
        allowed: String,
    },
    #[error("malformed attribute key `{0}`; expected `attribute=value`")]
    MalformedKey(String),
    #[error("invalid registry: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    /// High/low polarity.
    Valued,
    /// A finite set of groups, e.g. demographic brackets.
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeEntry {
    pub id: String,
    pub description: String,
    pub kind: AttributeKind,
    /// Human-readable name used when rendering prompts.
    #[serde(default)]
    pub label: String,
    pub values: Vec<String>,
}

#[derive(Deserialize)]
struct EntryRepr {
    description: String,
    kind: AttributeKind,
    #[serde(default)]
    label: Option<String>,
    values: Vec<String>,
}

/// Canonical key for an attribute/value pair: lowercase, whitespace runs
/// replaced by `_`.
pub fn canonical_key(attribute: &str, value: &str) -> String {
    format!("{}={}", squash(attribute), squash(value))
}

fn squash(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeRegistry {
    entries: Vec<AttributeEntry>,
    by_key: BTreeMap<String, AttributeTarget>,
}

impl AttributeRegistry {
    /// The registry shipped with the crate: six medical-triage attributes and
    /// three survey demographics.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED).expect("bundled attribute registry is valid")
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RegistryError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let map: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(text).map_err(|e| RegistryError::Invalid(e.to_string()))?;
        let mut entries = Vec::with_capacity(map.len());
        for (id, value) in map {
            let repr: EntryRepr = serde_json::from_value(value)
                .map_err(|e| RegistryError::Invalid(format!("attribute `{id}`: {e}")))?;
            entries.push(AttributeEntry {
                label: repr.label.unwrap_or_else(|| id.replace('_', " ")),
                id,
                description: repr.description,
                kind: repr.kind,
                values: repr.values,
            });
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<AttributeEntry>) -> Result<Self, RegistryError> {
        let mut by_key = BTreeMap::new();
        for entry in &entries {
            match entry.kind {
                AttributeKind::Valued => {
                    let set: BTreeSet<&str> = entry.values.iter().map(String::as_str).collect();
                    if set != BTreeSet::from(["high", "low"]) || entry.values.len() != 2 {
                        return Err(RegistryError::Invalid(format!(
                            "valued attribute `{}` must allow exactly high and low",
                            entry.id
                        )));
                    }
                }
                AttributeKind::Categorical if entry.values.is_empty() => {
                    return Err(RegistryError::Invalid(format!(
                        "categorical attribute `{}` has no values",
                        entry.id
                    )));
                }
                AttributeKind::Categorical => {}
            }
            for value in &entry.values {
                let key = canonical_key(&entry.id, value);
                let target = AttributeTarget::new(&entry.id, value);
                if let Some(prev) = by_key.insert(key.clone(), target) {
                    return Err(RegistryError::Invalid(format!(
                        "key `{key}` is produced by both {prev} and {}={value}",
                        entry.id
                    )));
                }
            }
        }
        Ok(Self { entries, by_key })
    }

    pub fn entries(&self) -> &[AttributeEntry] {
        &self.entries
    }

    /// Case-insensitive lookup by attribute id.
    pub fn get(&self, attribute: &str) -> Option<&AttributeEntry> {
        let wanted = squash(attribute);
        self.entries.iter().find(|e| squash(&e.id) == wanted)
    }

    /// Validate `(attribute, value)` and return it with the registry's spelling.
    pub fn resolve(&self, attribute: &str, value: &str) -> Result<AttributeTarget, RegistryError> {
        let entry = self
            .get(attribute)
            .ok_or_else(|| RegistryError::UnknownAttribute(attribute.to_string()))?;
        let wanted = squash(value);
        entry
            .values
            .iter()
            .find(|v| squash(v) == wanted)
            .map(|v| AttributeTarget::new(&entry.id, v))
            .ok_or_else(|| RegistryError::UnknownValue {
                attribute: entry.id.clone(),
                value: value.to_string(),
                allowed: entry.values.join(", "),
            })
    }

    pub fn validate(&self, target: &AttributeTarget) -> Result<AttributeTarget, RegistryError> {
        self.resolve(&target.attribute, &target.value)
    }

    /// Canonical `attribute=value` key for a target.
    pub fn attribute_key(&self, target: &AttributeTarget) -> Result<String, RegistryError> {
        let t = self.validate(target)?;
        Ok(canonical_key(&t.attribute, &t.value))
    }

    /// Parse a key in any spelling that canonicalizes to a registered key.
    pub fn parse_key(&self, key: &str) -> Result<AttributeTarget, RegistryError> {
        let (attribute, value) = key
            .split_once('=')
            .ok_or_else(|| RegistryError::MalformedKey(key.to_string()))?;
        if let Some(t) = self.by_key.get(&canonical_key(attribute, value)) {
            return Ok(t.clone());
        }
        // Re-run resolution for a precise error.
        self.resolve(attribute.trim(), value.trim())
    }

    /// Normalize a key to canonical form, failing if it is not registered.
    pub fn canonicalize_key(&self, key: &str) -> Result<String, RegistryError> {
        let t = self.parse_key(key)?;
        Ok(canonical_key(&t.attribute, &t.value))
    }

    /// Every registered key, in registry order.
    pub fn keys(&self) -> Vec<String> {
        self.entries
            .iter()
            .flat_map(|e| e.values.iter().map(move |v| canonical_key(&e.id, v)))
            .collect()
    }
}

impl Default for AttributeRegistry {
    fn default() -> Self {
        Self::bundled()
    }
}
