//! Schema-conformant decisions from free-text backends.
//!
//! The backend's reply is scanned for its first balanced JSON object, which is
//! validated against the decision schema. On failure the request is re-sent
//! with a repair note naming the error and restating the schema, up to
//! `max_retries` more times.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::backend::{Backend, BackendError, CompletionRequest, GenerationParams};
use crate::model::{DecisionOutput, ErrorDescriptor};

pub const DEFAULT_MAX_RETRIES: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("a decision needs at least 2 choices, got {0}")]
pub struct SchemaError(pub usize);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no JSON object found in output")]
    NoJsonObject,
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` must be {expected}")]
    WrongType {
        field: &'static str,
        expected: &'static str,
    },
    #[error("field `reasoning` must be non-empty")]
    EmptyReasoning,
    #[error("choice {choice} is out of range; must satisfy 0 <= choice < {num_choices}")]
    ChoiceOutOfRange { choice: i128, num_choices: usize },
    #[error("{0}")]
    Constraint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSchema {
    num_choices: usize,
}

pub fn build_schema(num_choices: usize) -> Result<DecisionSchema, SchemaError> {
    if num_choices < 2 {
        return Err(SchemaError(num_choices));
    }
    Ok(DecisionSchema { num_choices })
}

impl DecisionSchema {
    pub fn num_choices(&self) -> usize {
        self.num_choices
    }

    /// JSON-Schema form. `reasoning` is declared, and required, before `choice`.
    pub fn to_json_schema(&self) -> Value {
        json!({
            "type": "object",
            "properties": {
                "reasoning": {"type": "string", "minLength": 1},
                "choice": {"type": "integer", "minimum": 0, "maximum": self.num_choices - 1},
            },
            "required": ["reasoning", "choice"],
        })
    }

    pub fn schema_text(&self) -> String {
        self.to_json_schema().to_string()
    }

    /// Output-format instruction appended to the user prompt.
    pub fn instruction(&self) -> String {
        format!(
            "Respond with a single JSON object matching this schema. Write your reasoning first, then give the index of your chosen answer as \"choice\".\n{}",
            self.schema_text()
        )
    }

    pub fn accepts(&self, d: &DecisionOutput) -> bool {
        d.choice < self.num_choices && !d.reasoning.trim().is_empty()
    }
}

/// Byte range of the first balanced `{...}` in `raw` that parses as a JSON object.
pub fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(offset) = raw[start..].find('{') {
        let open = start + offset;
        if let Some(close) = matching_brace(bytes, open) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&raw[open..=close]) {
                return Some(map);
            }
        }
        start = open + 1;
    }
    None
}

fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Extract and validate a decision from raw model output.
pub fn parse_decision(raw: &str, schema: &DecisionSchema) -> Result<DecisionOutput, ParseError> {
    let obj = first_json_object(raw).ok_or(ParseError::NoJsonObject)?;
    let reasoning = match obj.get("reasoning") {
        None => return Err(ParseError::MissingField("reasoning")),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(ParseError::WrongType {
                field: "reasoning",
                expected: "a string",
            })
        }
    };
    if reasoning.trim().is_empty() {
        return Err(ParseError::EmptyReasoning);
    }
    let choice = match obj.get("choice") {
        None => return Err(ParseError::MissingField("choice")),
        Some(Value::Number(n)) => {
            if let Some(u) = n.as_u64() {
                u as i128
            } else if let Some(i) = n.as_i64() {
                i as i128
            } else {
                return Err(ParseError::WrongType {
                    field: "choice",
                    expected: "an integer",
                });
            }
        }
        Some(_) => {
            return Err(ParseError::WrongType {
                field: "choice",
                expected: "an integer",
            })
        }
    };
    if choice < 0 || choice >= schema.num_choices as i128 {
        return Err(ParseError::ChoiceOutOfRange {
            choice,
            num_choices: schema.num_choices,
        });
    }
    Ok(DecisionOutput {
        reasoning,
        choice: choice as usize,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepairPolicy {
    pub max_retries: u32,
}

impl Default for RepairPolicy {
    fn default() -> Self {
        Self {
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

/// Successful structured generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated<T> {
    pub value: T,
    pub retries: u32,
    /// Raw text of the accepted attempt.
    pub raw_output: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FailureCause {
    /// Every attempt produced unusable output; holds the last error.
    Exhausted(String),
    Backend(BackendError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationFailure {
    pub cause: FailureCause,
    /// Raw output of every attempt that returned text.
    pub attempts: Vec<String>,
    pub retries: u32,
    pub latency_ms: f64,
}

impl GenerationFailure {
    pub fn descriptor(&self) -> ErrorDescriptor {
        let (kind, message) = match &self.cause {
            FailureCause::Exhausted(last) => (
                "exhausted_retries".to_string(),
                format!("no valid output after {} attempts; last error: {last}", self.retries + 1),
            ),
            FailureCause::Backend(e) => (format!("backend_{}", e.kind()), e.to_string()),
        };
        ErrorDescriptor {
            kind,
            message,
            attempts: self.attempts.clone(),
        }
    }
}

fn repair_prompt(user_prompt: &str, raw: &str, error: &str, schema_text: &str) -> String {
    format!(
        "{user_prompt}\n\nYour previous response could not be used: {error}\nPrevious response:\n{raw}\n\nRespond again with a single JSON object that matches this schema:\n{schema_text}"
    )
}

/// Call `backend` until `validate` accepts the output or the retry budget is
/// spent. Backend call count is always `retries + 1 <= max_retries + 1`.
pub async fn generate_validated<T, E, F>(
    backend: &dyn Backend,
    system_prompt: &str,
    user_prompt: &str,
    params: &GenerationParams,
    policy: &RepairPolicy,
    schema_text: &str,
    validate: F,
) -> Result<Generated<T>, GenerationFailure>
where
    E: std::fmt::Display,
    F: Fn(&str) -> Result<T, E>,
{
    let started = Instant::now();
    let mut attempts = Vec::new();
    let mut prompt = user_prompt.to_string();
    let mut attempt = 0u32;
    loop {
        let req = CompletionRequest {
            system_prompt: system_prompt.to_string(),
            user_prompt: prompt.clone(),
            params: params.clone(),
            attempt,
        };
        let elapsed = || started.elapsed().as_secs_f64() * 1000.0;
        let last_error = match backend.complete(&req).await {
            Ok(resp) => match validate(&resp.text) {
                Ok(value) => {
                    return Ok(Generated {
                        value,
                        retries: attempt,
                        raw_output: resp.text,
                        latency_ms: elapsed(),
                    })
                }
                Err(e) => {
                    let msg = e.to_string();
                    prompt = repair_prompt(user_prompt, &resp.text, &msg, schema_text);
                    attempts.push(resp.text);
                    msg
                }
            },
            Err(e) if e.is_retryable() && attempt < policy.max_retries => e.to_string(),
            Err(e) => {
                return Err(GenerationFailure {
                    cause: FailureCause::Backend(e),
                    attempts,
                    retries: attempt,
                    latency_ms: elapsed(),
                })
            }
        };
        if attempt >= policy.max_retries {
            return Err(GenerationFailure {
                cause: FailureCause::Exhausted(last_error),
                attempts,
                retries: attempt,
                latency_ms: elapsed(),
            });
        }
        attempt += 1;
    }
}

/// Structured decision generation: the schema instruction is appended to the
/// user prompt by the caller; this runs the parse-and-repair loop.
pub async fn generate_decision(
    backend: &dyn Backend,
    system_prompt: &str,
    user_prompt: &str,
    params: &GenerationParams,
    schema: &DecisionSchema,
    policy: &RepairPolicy,
) -> Result<Generated<DecisionOutput>, GenerationFailure> {
    generate_validated(
        backend,
        system_prompt,
        user_prompt,
        params,
        policy,
        &schema.schema_text(),
        |raw| parse_decision(raw, schema),
    )
    .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{connect, mock_backend, MockRule, MockScript};

    fn three() -> DecisionSchema {
        build_schema(3).unwrap()
    }

    #[test]
    fn schema_bounds() {
        let s = build_schema(4).unwrap();
        for c in 0..4 {
            assert!(s.accepts(&DecisionOutput { reasoning: "r".into(), choice: c }));
        }
        let s2 = build_schema(2).unwrap();
        assert_eq!(
            parse_decision(r#"{"reasoning":"r","choice":2}"#, &s2),
            Err(ParseError::ChoiceOutOfRange { choice: 2, num_choices: 2 })
        );
        assert_eq!(build_schema(1), Err(SchemaError(1)));
    }

    #[test]
    fn schema_text_is_stable_and_reasoning_first() {
        let text = build_schema(3).unwrap().schema_text();
        assert_eq!(
            text,
            r#"{"type":"object","properties":{"reasoning":{"type":"string","minLength":1},"choice":{"type":"integer","minimum":0,"maximum":2}},"required":["reasoning","choice"]}"#
        );
        assert!(text.find("reasoning").unwrap() < text.find("\"choice\"").unwrap());
        let instr = build_schema(3).unwrap().instruction();
        assert!(instr.find("reasoning").unwrap() < instr.find("\"choice\"").unwrap());
    }

    #[test]
    fn parse_examples() {
        let d = parse_decision(r#"{"reasoning":"because","choice":1}"#, &three()).unwrap();
        assert_eq!(d, DecisionOutput { reasoning: "because".into(), choice: 1 });

        let fenced = "Sure! ```json {\"reasoning\":\"r\",\"choice\":0}``` ";
        assert_eq!(parse_decision(fenced, &three()).unwrap().choice, 0);

        assert!(matches!(
            parse_decision(r#"{"reasoning":"r","choice":5}"#, &three()),
            Err(ParseError::ChoiceOutOfRange { choice: 5, .. })
        ));
    }

    #[test]
    fn parse_errors() {
        let s = three();
        assert_eq!(parse_decision("no json", &s), Err(ParseError::NoJsonObject));
        assert_eq!(parse_decision("{oops}", &s), Err(ParseError::NoJsonObject));
        assert_eq!(
            parse_decision(r#"{"choice":1}"#, &s),
            Err(ParseError::MissingField("reasoning"))
        );
        assert_eq!(
            parse_decision(r#"{"reasoning":"  ","choice":1}"#, &s),
            Err(ParseError::EmptyReasoning)
        );
        assert!(matches!(
            parse_decision(r#"{"reasoning":"r","choice":1.5}"#, &s),
            Err(ParseError::WrongType { field: "choice", .. })
        ));
        assert!(matches!(
            parse_decision(r#"{"reasoning":"r","choice":"1"}"#, &s),
            Err(ParseError::WrongType { .. })
        ));
        assert!(matches!(
            parse_decision(r#"{"reasoning":"r","choice":-1}"#, &s),
            Err(ParseError::ChoiceOutOfRange { choice: -1, .. })
        ));
    }

    #[test]
    fn first_object_wins_and_braces_in_strings() {
        let raw = r#"x {"reasoning":"has } and { inside","choice":2} then {"reasoning":"b","choice":0}"#;
        let d = parse_decision(raw, &three()).unwrap();
        assert_eq!(d.choice, 2);
        assert_eq!(d.reasoning, "has } and { inside");
        let after_junk = r#"{not json} {"reasoning":"ok","choice":1}"#;
        assert_eq!(parse_decision(after_junk, &three()).unwrap().choice, 1);
    }

    async fn run(script: MockScript, max_retries: u32) -> Result<Generated<DecisionOutput>, GenerationFailure> {
        let backend = connect(&mock_backend(script)).unwrap();
        generate_decision(
            backend.as_ref(),
            "sys",
            "q\n\n0. a\n1. b\n2. c",
            &GenerationParams::default(),
            &three(),
            &RepairPolicy { max_retries },
        )
        .await
    }

    #[tokio::test]
    async fn valid_first_try() {
        let g = run(MockScript::always(2), 3).await.unwrap();
        assert_eq!((g.value.choice, g.retries), (2, 0));
    }

    #[tokio::test]
    async fn one_repair() {
        let script = MockScript::rules(vec![
            MockRule::on_attempt(0, "garbage"),
            MockRule::any(r#"{"reasoning":"fixed","choice":1}"#),
        ]);
        let g = run(script, 3).await.unwrap();
        assert_eq!((g.value.choice, g.retries), (1, 1));
    }

    #[tokio::test]
    async fn exhausted_after_max_retries_plus_one() {
        let g = run(MockScript::rules(vec![MockRule::any("garbage")]), 3)
            .await
            .unwrap_err();
        // Oracle: one initial call plus max_retries repairs.
        assert_eq!(g.attempts.len(), 3 + 1);
        assert_eq!(g.retries, 3);
        assert!(matches!(g.cause, FailureCause::Exhausted(_)));
        assert_eq!(g.descriptor().kind, "exhausted_retries");
    }

    #[tokio::test]
    async fn repair_prompt_carries_error_and_schema() {
        // Attempt 1 only succeeds if the repair note names the error and schema.
        let script = MockScript::rules(vec![
            MockRule::on_attempt(0, r#"{"reasoning":"r","choice":9}"#),
            MockRule::when_contains("choice 9 is out of range", r#"{"reasoning":"r","choice":0}"#),
        ]);
        let g = run(script, 1).await.unwrap();
        assert_eq!(g.retries, 1);
    }

    #[tokio::test]
    async fn fatal_backend_error_stops_immediately() {
        let g = run(MockScript::default(), 3).await.unwrap_err();
        assert!(matches!(g.cause, FailureCause::Backend(BackendError::Unscripted(_))));
        assert_eq!(g.retries, 0);
    }
}
