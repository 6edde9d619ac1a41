//! System-prompt templates and the user-prompt renderer.
//!
//! Template resolution, most specific first:
//! explicit override > (adm, attribute, value) > (adm, attribute) >
//! (adm, domain) > (adm).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::model::{AttributeTarget, Scenario};
use crate::registry::{canonical_key, AttributeRegistry, RegistryError};

const BUNDLED: &str = include_str!("../data/templates.json");

const PLACEHOLDERS: &[&str] = &[
    "attribute",
    "attribute_label",
    "attribute_description",
    "value",
    "context",
    "question",
    "choices",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("no template for {adm_kind}; tried {}", tried.join(", "))]
    Unresolved { adm_kind: String, tried: Vec<String> },
    #[error("template `{template}` uses `{{{placeholder}}}` which has no value here")]
    MissingValue {
        template: String,
        placeholder: String,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("invalid template file: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub id: String,
    pub adm_kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    /// True for prompts written for this tool rather than taken from a
    /// published reference.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthesized: bool,
    pub body: String,
}

impl PromptTemplate {
    fn uses_target(&self) -> bool {
        self.attribute.is_some()
            || ["attribute", "attribute_label", "attribute_description", "value"]
                .iter()
                .any(|p| self.body.contains(&format!("{{{p}}}")))
    }
}

/// The outcome of resolving and rendering a system prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderedPrompt {
    pub text: String,
    /// Template id, or `override` for caller-supplied text.
    pub template_id: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    templates: Vec<PromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::bundled()
    }
}

impl TemplateRegistry {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED).expect("bundled templates are valid")
    }

    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let templates: Vec<PromptTemplate> =
            serde_json::from_str(text).map_err(|e| PromptError::Invalid(e.to_string()))?;
        Ok(Self { templates })
    }

    /// Add templates from a file; an entry whose id already exists replaces it.
    pub fn extend_from_file(&mut self, path: &Path) -> Result<(), PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Invalid(format!("{}: {e}", path.display())))?;
        self.extend(Self::from_json(&text)?.templates);
        Ok(())
    }

    pub fn extend(&mut self, templates: impl IntoIterator<Item = PromptTemplate>) {
        for t in templates {
            match self.templates.iter_mut().find(|e| e.id == t.id) {
                Some(slot) => *slot = t,
                None => self.templates.push(t),
            }
        }
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn get(&self, id: &str) -> Option<&PromptTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    /// Whether any template for `adm_kind` depends on an alignment target.
    pub fn is_target_aware(&self, adm_kind: &str) -> bool {
        self.templates
            .iter()
            .any(|t| t.adm_kind == adm_kind && t.uses_target())
    }

    /// Pick the most specific template for `(adm_kind, target, domain)`.
    pub fn resolve(
        &self,
        adm_kind: &str,
        target: Option<&AttributeTarget>,
        domain: Option<&str>,
    ) -> Result<&PromptTemplate, PromptError> {
        let same = |a: &Option<String>, b: &str| {
            a.as_deref()
                .is_some_and(|a| canonical_key(a, "") == canonical_key(b, ""))
        };
        let for_kind: Vec<&PromptTemplate> = self
            .templates
            .iter()
            .filter(|t| t.adm_kind == adm_kind)
            .filter(|t| t.domain.is_none() || domain.is_some_and(|d| same(&t.domain, d)))
            .collect();
        // Domain-specific entries win over domain-agnostic ones at the same level.
        let pick = |pred: &dyn Fn(&PromptTemplate) -> bool| {
            for_kind
                .iter()
                .filter(|t| pred(t))
                .max_by_key(|t| t.domain.is_some())
                .copied()
        };

        let mut tried = Vec::new();
        if let Some(t) = target {
            tried.push(format!("({adm_kind}, {}, {})", t.attribute, t.value));
            if let Some(hit) = pick(&|p| same(&p.attribute, &t.attribute) && same(&p.value, &t.value)) {
                return Ok(hit);
            }
            tried.push(format!("({adm_kind}, {})", t.attribute));
            if let Some(hit) = pick(&|p| same(&p.attribute, &t.attribute) && p.value.is_none()) {
                return Ok(hit);
            }
        }
        if let Some(d) = domain {
            tried.push(format!("({adm_kind}, domain {d})"));
            if let Some(hit) = for_kind
                .iter()
                .find(|p| p.attribute.is_none() && p.domain.is_some())
            {
                return Ok(hit);
            }
        }
        tried.push(format!("({adm_kind})"));
        for_kind
            .iter()
            .find(|p| p.attribute.is_none() && p.domain.is_none())
            .copied()
            .ok_or_else(|| PromptError::Unresolved {
                adm_kind: adm_kind.to_string(),
                tried,
            })
    }

    /// Resolve and render the system prompt for an ADM kind and optional target.
    ///
    /// For ADM kinds whose templates never depend on a target, a supplied
    /// target is ignored with a warning.
    pub fn render_system_prompt(
        &self,
        attributes: &AttributeRegistry,
        adm_kind: &str,
        target: Option<&AttributeTarget>,
        scenario: Option<&Scenario>,
    ) -> Result<RenderedPrompt, PromptError> {
        let mut warnings = Vec::new();
        let target = match target {
            Some(t) if !self.is_target_aware(adm_kind) => {
                let msg = format!("{adm_kind} ignores alignment target {t}");
                warn!("{msg}");
                warnings.push(msg);
                None
            }
            Some(t) => Some(attributes.validate(t)?),
            None => None,
        };
        let domain = scenario.map(|s| s.domain.as_str()).filter(|d| !d.is_empty());
        let template = self.resolve(adm_kind, target.as_ref(), domain)?;

        let mut vars = BTreeMap::new();
        if let Some(t) = &target {
            let entry = attributes
                .get(&t.attribute)
                .expect("validated target has an entry");
            vars.insert("attribute", t.attribute.clone());
            vars.insert("attribute_label", entry.label.clone());
            vars.insert("attribute_description", entry.description.clone());
            vars.insert("value", t.value.clone());
        }
        if let Some(s) = scenario {
            vars.insert("context", s.context.clone());
            vars.insert("question", s.question.clone());
            vars.insert("choices", choice_lines(s));
        }
        Ok(RenderedPrompt {
            text: fill(&template.id, &template.body, &vars)?,
            template_id: template.id.clone(),
            warnings,
        })
    }
}

fn fill(id: &str, body: &str, vars: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = body.to_string();
    for name in PLACEHOLDERS {
        let token = format!("{{{name}}}");
        if out.contains(&token) {
            let value = vars.get(name).ok_or_else(|| PromptError::MissingValue {
                template: id.to_string(),
                placeholder: name.to_string(),
            })?;
            out = out.replace(&token, value);
        }
    }
    Ok(out)
}

fn single_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn choice_lines(scenario: &Scenario) -> String {
    scenario
        .choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{i}. {}", single_line(&c.text)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The scenario as shown to the model: context (if any), question, and a
/// 0-based numbered choice list, one choice per line.
pub fn render_user_prompt(scenario: &Scenario) -> String {
    let mut parts = Vec::with_capacity(3);
    let context = scenario.context.trim();
    if !context.is_empty() {
        parts.push(context.to_string());
    }
    parts.push(scenario.question.trim().to_string());
    parts.push(choice_lines(scenario));
    parts.join("\n\n")
}
