//! Deterministic scripted backend used by tests and desk-scale runs.
//!
//! A script is an ordered list of `{match, response}` rules; the first rule
//! whose matcher accepts the request supplies the response. Responses may use
//! `{num_choices}`, `{max_choice}` and `{seeded_choice}`. The number of choices
//! is read from the numbered `0. ...` lines of the user prompt, and the seeded
//! draw hashes `(seed, system prompt, user prompt)`, so output depends only on
//! the script and the request.

use std::path::PathBuf;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendKind, BackendSpec, CompletionRequest, CompletionResponse, GenerationParams};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockMatch {
    /// Substring that must appear in the system or user prompt.
    pub contains: Option<String>,
    /// Substrings that must all appear, each in the system or user prompt.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub contains_all: Vec<String>,
    /// Attempt number within the repair loop (0 = first call).
    pub attempt: Option<u32>,
}

impl MockMatch {
    fn accepts(&self, req: &CompletionRequest) -> bool {
        let found = |needle: &str| req.system_prompt.contains(needle) || req.user_prompt.contains(needle);
        let text_ok = self.contains.as_deref().is_none_or(found) && self.contains_all.iter().all(|n| found(n));
        text_ok && self.attempt.is_none_or(|a| a == req.attempt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(rename = "match", default)]
    pub matcher: MockMatch,
    pub response: String,
}

impl MockRule {
    pub fn any(response: impl Into<String>) -> Self {
        Self {
            matcher: MockMatch::default(),
            response: response.into(),
        }
    }

    pub fn when_contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: MockMatch {
                contains: Some(needle.into()),
                ..MockMatch::default()
            },
            response: response.into(),
        }
    }

    pub fn when_all(needles: &[&str], response: impl Into<String>) -> Self {
        Self {
            matcher: MockMatch {
                contains_all: needles.iter().map(|n| n.to_string()).collect(),
                ..MockMatch::default()
            },
            response: response.into(),
        }
    }

    pub fn on_attempt(attempt: u32, response: impl Into<String>) -> Self {
        Self {
            matcher: MockMatch {
                attempt: Some(attempt),
                ..MockMatch::default()
            },
            response: response.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockScript {
    pub seed: u64,
    pub rules: Vec<MockRule>,
    /// Optional file holding a JSON list of rules, appended after `rules`.
    pub path: Option<PathBuf>,
}

impl MockScript {
    pub fn rules(rules: Vec<MockRule>) -> Self {
        Self {
            seed: 0,
            rules,
            path: None,
        }
    }

    /// Always answer `choice` with fixed reasoning.
    pub fn always(choice: usize) -> Self {
        Self::rules(vec![MockRule::any(format!(
            r#"{{"reasoning":"mock","choice":{choice}}}"#
        ))])
    }

    /// Answer with a choice drawn uniformly from a hash of seed and request.
    pub fn uniform(seed: u64) -> Self {
        Self {
            seed,
            rules: vec![MockRule::any(
                r#"{"reasoning":"mock draw","choice":{seeded_choice}}"#,
            )],
            path: None,
        }
    }
}

/// A mock backend spec around `script`.
pub fn mock_backend(script: MockScript) -> BackendSpec {
    BackendSpec {
        id: "mock".into(),
        kind: BackendKind::Mock,
        endpoint: None,
        model_name: "mock".into(),
        auth: None,
        timeout_ms: super::DEFAULT_TIMEOUT_MS,
        gen_params: GenerationParams::default(),
        mock: Some(script),
    }
}

pub struct MockBackend {
    id: String,
    seed: u64,
    rules: Vec<MockRule>,
}

impl MockBackend {
    pub fn new(spec: &BackendSpec) -> Result<Self, BackendError> {
        let script = spec
            .mock
            .as_ref()
            .ok_or_else(|| BackendError::Config("mock backend requires a script".into()))?;
        let mut rules = script.rules.clone();
        if let Some(path) = &script.path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                BackendError::Config(format!("mock script {}: {e}", path.display()))
            })?;
            let extra: Vec<MockRule> = serde_json::from_str(&text).map_err(|e| {
                BackendError::Config(format!("mock script {}: {e}", path.display()))
            })?;
            rules.extend(extra);
        }
        Ok(Self {
            id: spec.id.clone(),
            seed: script.seed,
            rules,
        })
    }

    fn render(&self, template: &str, req: &CompletionRequest) -> Result<String, BackendError> {
        if !template.contains("{num_choices}")
            && !template.contains("{max_choice}")
            && !template.contains("{seeded_choice}")
        {
            return Ok(template.to_string());
        }
        let n = count_choices(&req.user_prompt);
        if n == 0 {
            return Err(BackendError::Unscripted(
                "response needs the choice count but the prompt lists no numbered choices".into(),
            ));
        }
        let draw = seeded_draw(self.seed, req) % n as u64;
        Ok(template
            .replace("{num_choices}", &n.to_string())
            .replace("{max_choice}", &(n - 1).to_string())
            .replace("{seeded_choice}", &draw.to_string()))
    }
}

/// Length of the `0. `, `1. `, ... run of numbered lines.
fn count_choices(prompt: &str) -> usize {
    let mut next = 0usize;
    for line in prompt.lines() {
        if line.starts_with(&format!("{next}. ")) {
            next += 1;
        }
    }
    next
}

fn seeded_draw(seed: u64, req: &CompletionRequest) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(req.system_prompt.as_bytes());
    h.update([0u8]);
    h.update(req.user_prompt.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[async_trait]
impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let rule = self
            .rules
            .iter()
            .find(|r| r.matcher.accepts(req))
            .ok_or_else(|| {
                let head: String = req.user_prompt.chars().take(80).collect();
                BackendError::Unscripted(format!(
                    "no rule matches attempt {} of prompt starting {head:?}",
                    req.attempt
                ))
            })?;
        Ok(CompletionResponse {
            text: self.render(&rule.response, req)?,
            usage: None,
            latency_ms: 0.0,
        })
    }
}
