//! Baseline and prompt-aligned ADMs. They share one code path and differ only
//! in how the system prompt is resolved.

use std::sync::Arc;

use async_trait::async_trait;
use tracing::warn;

use super::{precheck, AdmContext, AdmError, AdmSpec, DecisionMaker, RecordDraft};
use crate::backend::{connect, Backend};
use crate::model::{AttributeTarget, Choice, DecisionRecord, Scenario};
use crate::prompts::render_user_prompt;
use crate::structured::{build_schema, generate_decision};

pub struct PromptedAdm {
    spec: AdmSpec,
    ctx: AdmContext,
    backend: Arc<dyn Backend>,
    aligned: bool,
}

impl PromptedAdm {
    pub fn new(spec: AdmSpec, ctx: AdmContext, aligned: bool) -> Result<Self, AdmError> {
        let backend = connect(&spec.backend)?;
        Ok(Self {
            spec,
            ctx,
            backend,
            aligned,
        })
    }
}

#[async_trait]
impl DecisionMaker for PromptedAdm {
    fn spec(&self) -> &AdmSpec {
        &self.spec
    }

    fn requires_target(&self) -> bool {
        self.aligned
    }

    async fn choose_action(
        &self,
        scenario: &Scenario,
        choices: &[Choice],
        target: Option<&AttributeTarget>,
        prompt_override: Option<&str>,
    ) -> DecisionRecord {
        let target = match (self.aligned, target) {
            (false, Some(t)) => {
                warn!(adm = %self.spec.id, "baseline ADM ignores alignment target {t}");
                None
            }
            (true, None) => {
                return RecordDraft::new(&self.spec, &self.ctx, scenario, None)
                    .config_error(format!("{} requires an alignment target", self.spec.kind));
            }
            (_, t) => t.cloned(),
        };
        let target = match target.map(|t| self.ctx.attributes.validate(&t)).transpose() {
            Ok(t) => t,
            Err(e) => {
                return RecordDraft::new(&self.spec, &self.ctx, scenario, None).config_error(e.to_string())
            }
        };
        let draft = RecordDraft::new(&self.spec, &self.ctx, scenario, target.clone());
        if let Err(e) = precheck(scenario, choices) {
            return draft.config_error(e);
        }

        let override_text = prompt_override.or(self.spec.system_prompt_override.as_deref());
        let system_prompt = match override_text {
            Some(text) => text.to_string(),
            None => match self.ctx.templates.render_system_prompt(
                &self.ctx.attributes,
                &self.spec.kind,
                target.as_ref(),
                Some(scenario),
            ) {
                Ok(r) => r.text,
                Err(e) => return draft.config_error(e.to_string()),
            },
        };
        let schema = build_schema(choices.len()).expect("precheck guarantees >= 2 choices");
        let user_prompt = format!("{}\n\n{}", render_user_prompt(scenario), schema.instruction());

        let outcome = generate_decision(
            self.backend.as_ref(),
            &system_prompt,
            &user_prompt,
            &self.spec.backend.gen_params,
            &schema,
            &self.spec.repair,
        )
        .await;

        let mut record = draft.record();
        record.system_prompt = system_prompt;
        record.prompt_override = override_text.is_some();
        record.user_prompt = user_prompt;
        match outcome {
            Ok(g) => {
                record.raw_output = g.raw_output;
                record.decision = Some(g.value);
                record.retries = g.retries;
            }
            Err(f) => {
                record.raw_output = f.attempts.last().cloned().unwrap_or_default();
                record.retries = f.retries;
                record.error = Some(f.descriptor());
            }
        }
        record
    }
}
