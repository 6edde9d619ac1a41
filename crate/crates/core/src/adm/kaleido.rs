//! Kaleido-style ADM: probe an assessor for each choice's relevance and
//! valence toward the target attribute, score, and pick the best choice.
//!
//! Default score: `relevance * (p_supports - p_opposes)`. A `high` target
//! picks the argmax of the score, a `low` target the argmax of its negation.
//! Ties go to the lowest choice index. `p_either` carries no weight.

use std::sync::Arc;

use async_trait::async_trait;
use futures::future::join_all;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{precheck, AdmContext, AdmError, AdmSpec, DecisionMaker, RecordDraft};
use crate::backend::{connect, Backend, BackendSpec, GenerationParams};
use crate::model::{AttributeTarget, Choice, DecisionOutput, DecisionRecord, ErrorDescriptor, KaleidoAssessment, Scenario};
use crate::registry::{AttributeEntry, AttributeKind};
use crate::structured::{first_json_object, generate_validated, Generated, GenerationFailure, RepairPolicy};

/// Sums within this distance of 1 are renormalized; farther is an error.
pub const NORMALIZE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringRule {
    /// `relevance * (p_supports - p_opposes)`
    #[default]
    RelevanceWeightedMargin,
    /// `p_supports - p_opposes`, ignoring relevance.
    ValenceMargin,
}

impl ScoringRule {
    pub fn score(&self, a: &KaleidoAssessment) -> f64 {
        let margin = a.p_supports - a.p_opposes;
        match self {
            ScoringRule::RelevanceWeightedMargin => a.relevance * margin,
            ScoringRule::ValenceMargin => margin,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KaleidoParams {
    /// Backend probed for assessments; defaults to the ADM's own backend.
    pub assessor: Option<BackendSpec>,
    pub scoring: ScoringRule,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssessmentError {
    #[error("{field} = {value} is outside [0, 1]")]
    Range { field: &'static str, value: f64 },
    #[error("valence probabilities sum to {sum}, not 1")]
    Normalization { sum: f64 },
    #[error("assessment reply is missing numeric field `{0}`")]
    MissingField(&'static str),
    #[error("no JSON object found in assessment reply")]
    NoJsonObject,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KaleidoError {
    #[error("no assessment of `{attribute}` for choice {choice}")]
    IncompleteAssessment { attribute: String, choice: usize },
    #[error("Kaleido decisions need a high/low target, got `{0}`")]
    UnsupportedTarget(String),
}

impl KaleidoAssessment {
    /// Validate ranges and normalize the valence distribution.
    pub fn new(
        choice_index: usize,
        attribute: impl Into<String>,
        relevance: f64,
        p_supports: f64,
        p_opposes: f64,
        p_either: f64,
    ) -> Result<Self, AssessmentError> {
        for (field, value) in [
            ("relevance", relevance),
            ("p_supports", p_supports),
            ("p_opposes", p_opposes),
            ("p_either", p_either),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(AssessmentError::Range { field, value });
            }
        }
        let sum = p_supports + p_opposes + p_either;
        if (sum - 1.0).abs() > NORMALIZE_TOLERANCE {
            return Err(AssessmentError::Normalization { sum });
        }
        Ok(Self {
            choice_index,
            attribute: attribute.into(),
            relevance,
            p_supports: p_supports / sum,
            p_opposes: p_opposes / sum,
            p_either: p_either / sum,
        })
    }
}

pub fn assessment_schema() -> Value {
    let unit = json!({"type": "number", "minimum": 0, "maximum": 1});
    json!({
        "type": "object",
        "properties": {
            "relevance": unit,
            "p_supports": unit,
            "p_opposes": unit,
            "p_either": unit,
        },
        "required": ["relevance", "p_supports", "p_opposes", "p_either"],
    })
}

/// User prompt sent to the assessor for one (choice, attribute) pair.
pub fn probe_prompt(situation: &str, choice: &Choice, attribute: &AttributeEntry) -> String {
    let situation = situation.trim();
    let mut out = String::new();
    if !situation.is_empty() {
        out.push_str(&format!("Situation: {situation}\n"));
    }
    out.push_str(&format!(
        "Action: {}\nValue: {}: {}\n\nRespond with a single JSON object matching this schema:\n{}",
        choice.text.split_whitespace().collect::<Vec<_>>().join(" "),
        attribute.label,
        attribute.description,
        assessment_schema()
    ));
    out
}

fn parse_assessment(raw: &str, choice: usize, attribute: &str) -> Result<KaleidoAssessment, AssessmentError> {
    let obj = first_json_object(raw).ok_or(AssessmentError::NoJsonObject)?;
    let num = |k: &'static str| obj.get(k).and_then(Value::as_f64).ok_or(AssessmentError::MissingField(k));
    KaleidoAssessment::new(
        choice,
        attribute,
        num("relevance")?,
        num("p_supports")?,
        num("p_opposes")?,
        num("p_either")?,
    )
}

/// Probe `assessor` for one choice's relation to `attribute`, with the same
/// repair loop used for decisions.
pub async fn kaleido_assess(
    assessor: &dyn Backend,
    system_prompt: &str,
    situation: &str,
    choice: &Choice,
    attribute: &AttributeEntry,
    params: &GenerationParams,
    policy: &RepairPolicy,
) -> Result<Generated<KaleidoAssessment>, GenerationFailure> {
    let prompt = probe_prompt(situation, choice, attribute);
    let schema_text = assessment_schema().to_string();
    generate_validated(assessor, system_prompt, &prompt, params, policy, &schema_text, |raw| {
        parse_assessment(raw, choice.index, &attribute.id)
    })
    .await
}

/// Per-choice scores in choice order. Fails unless every choice
/// `0..num_choices` has an assessment of `attribute`.
pub fn kaleido_scores(
    assessments: &[KaleidoAssessment],
    num_choices: usize,
    attribute: &str,
    rule: ScoringRule,
) -> Result<Vec<f64>, KaleidoError> {
    (0..num_choices)
        .map(|c| {
            assessments
                .iter()
                .find(|a| a.choice_index == c && a.attribute.eq_ignore_ascii_case(attribute))
                .map(|a| rule.score(a))
                .ok_or_else(|| KaleidoError::IncompleteAssessment {
                    attribute: attribute.to_string(),
                    choice: c,
                })
        })
        .collect()
}

/// Choice index preferred for `target`; lowest index wins ties.
pub fn kaleido_decide(
    assessments: &[KaleidoAssessment],
    num_choices: usize,
    target: &AttributeTarget,
    rule: ScoringRule,
) -> Result<usize, KaleidoError> {
    let sign = match target.value.to_ascii_lowercase().as_str() {
        "high" => 1.0,
        "low" => -1.0,
        _ => return Err(KaleidoError::UnsupportedTarget(target.to_string())),
    };
    let scores = kaleido_scores(assessments, num_choices, &target.attribute, rule)?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if sign * s > sign * scores[best] {
            best = i;
        }
    }
    Ok(best)
}

pub struct KaleidoAdm {
    spec: AdmSpec,
    ctx: AdmContext,
    assessor: Arc<dyn Backend>,
    params: KaleidoParams,
}

impl KaleidoAdm {
    pub fn new(spec: AdmSpec, ctx: AdmContext) -> Result<Self, AdmError> {
        let params = spec.kaleido.clone().unwrap_or_default();
        let assessor = connect(params.assessor.as_ref().unwrap_or(&spec.backend))?;
        Ok(Self {
            spec,
            ctx,
            assessor,
            params,
        })
    }

    fn assessor_params(&self) -> &GenerationParams {
        &self
            .params
            .assessor
            .as_ref()
            .unwrap_or(&self.spec.backend)
            .gen_params
    }
}

const SEPARATOR: &str = "\n\n---\n\n";

#[async_trait]
impl DecisionMaker for KaleidoAdm {
    fn spec(&self) -> &AdmSpec {
        &self.spec
    }

    fn requires_target(&self) -> bool {
        true
    }

    async fn choose_action(
        &self,
        scenario: &Scenario,
        choices: &[Choice],
        target: Option<&AttributeTarget>,
        prompt_override: Option<&str>,
    ) -> DecisionRecord {
        let Some(target) = target else {
            return RecordDraft::new(&self.spec, &self.ctx, scenario, None)
                .config_error("kaleido requires an alignment target; unaligned Kaleido is undefined");
        };
        let target = match self.ctx.attributes.validate(target) {
            Ok(t) => t,
            Err(e) => return RecordDraft::new(&self.spec, &self.ctx, scenario, None).config_error(e.to_string()),
        };
        let draft = RecordDraft::new(&self.spec, &self.ctx, scenario, Some(target.clone()));
        if let Err(e) = precheck(scenario, choices) {
            return draft.config_error(e);
        }
        let entry = self
            .ctx
            .attributes
            .get(&target.attribute)
            .expect("validated target has an entry");
        if entry.kind != AttributeKind::Valued {
            return draft.config_error(KaleidoError::UnsupportedTarget(target.to_string()).to_string());
        }

        let override_text = prompt_override.or(self.spec.system_prompt_override.as_deref());
        let system_prompt = match override_text {
            Some(t) => t.to_string(),
            None => match self
                .ctx
                .templates
                .render_system_prompt(&self.ctx.attributes, &self.spec.kind, None, Some(scenario))
            {
                Ok(r) => r.text,
                Err(e) => return draft.config_error(e.to_string()),
            },
        };
        let situation = format!("{} {}", scenario.context.trim(), scenario.question.trim());

        let outcomes = join_all(choices.iter().map(|c| {
            kaleido_assess(
                self.assessor.as_ref(),
                &system_prompt,
                &situation,
                c,
                entry,
                self.assessor_params(),
                &self.spec.repair,
            )
        }))
        .await;

        let mut record = draft.record();
        record.system_prompt = system_prompt;
        record.prompt_override = override_text.is_some();
        record.user_prompt = choices
            .iter()
            .map(|c| probe_prompt(&situation, c, entry))
            .collect::<Vec<_>>()
            .join(SEPARATOR);

        let mut raws = Vec::with_capacity(outcomes.len());
        let mut assessments = Vec::with_capacity(outcomes.len());
        let mut failure: Option<ErrorDescriptor> = None;
        for (c, outcome) in choices.iter().zip(outcomes) {
            match outcome {
                Ok(g) => {
                    record.retries += g.retries;
                    raws.push(g.raw_output);
                    assessments.push(g.value);
                }
                Err(f) => {
                    record.retries += f.retries;
                    raws.push(f.attempts.last().cloned().unwrap_or_default());
                    if failure.is_none() {
                        let mut d = f.descriptor();
                        d.message = format!("assessing choice {}: {}", c.index, d.message);
                        failure = Some(d);
                    }
                }
            }
        }
        record.raw_output = raws.join(SEPARATOR);

        if let Some(err) = failure {
            record.assessments = assessments;
            record.error = Some(err);
            return record;
        }
        let rule = self.params.scoring;
        let outcome = kaleido_scores(&assessments, choices.len(), &target.attribute, rule)
            .and_then(|scores| Ok((scores, kaleido_decide(&assessments, choices.len(), &target, rule)?)));
        match outcome {
            Ok((scores, choice)) => {
                let listed = scores
                    .iter()
                    .enumerate()
                    .map(|(i, s)| format!("{i}: {s:.3}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                record.decision = Some(DecisionOutput {
                    reasoning: format!(
                        "Scores toward {} ({:?}): {listed}. Selected {choice} for target {target}.",
                        target.attribute, rule
                    ),
                    choice,
                });
            }
            Err(e) => record.error = Some(ErrorDescriptor::new("kaleido", e.to_string())),
        }
        record.assessments = assessments;
        record
    }
}
