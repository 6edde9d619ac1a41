//! Decision-makers. Every ADM is reached through [`DecisionMaker::choose_action`];
//! new kinds plug in via [`AdmRegistry::register`] without touching the runner
//! or metrics.

mod kaleido;
mod prompted;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendSpec};
use crate::model::{AttributeTarget, Choice, DecisionRecord, ErrorDescriptor, Scenario, Timing};
use crate::prompts::TemplateRegistry;
use crate::registry::AttributeRegistry;
use crate::structured::RepairPolicy;

pub use kaleido::{
    assessment_schema, kaleido_assess, kaleido_decide, kaleido_scores, probe_prompt, AssessmentError,
    KaleidoAdm, KaleidoError, KaleidoParams, ScoringRule,
};
pub use prompted::PromptedAdm;

pub const BASELINE: &str = "baseline";
pub const PROMPT_ALIGNED: &str = "prompt-aligned";
pub const KALEIDO: &str = "kaleido";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmSpec {
    pub id: String,
    pub kind: String,
    pub backend: BackendSpec,
    /// Replaces the resolved system prompt verbatim.
    #[serde(default)]
    pub system_prompt_override: Option<String>,
    #[serde(default)]
    pub repair: RepairPolicy,
    #[serde(default)]
    pub kaleido: Option<KaleidoParams>,
}

#[derive(Debug, Error)]
pub enum AdmError {
    #[error("unknown ADM kind `{kind}` (registered: {})", known.join(", "))]
    UnknownKind { kind: String, known: Vec<String> },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Registries every ADM renders prompts against, plus the run's config digest.
#[derive(Debug, Clone)]
pub struct AdmContext {
    pub attributes: Arc<AttributeRegistry>,
    pub templates: Arc<TemplateRegistry>,
    pub config_digest: String,
}

impl AdmContext {
    pub fn new(attributes: Arc<AttributeRegistry>, templates: Arc<TemplateRegistry>) -> Self {
        Self {
            attributes,
            templates,
            config_digest: String::new(),
        }
    }

    pub fn with_digest(mut self, digest: impl Into<String>) -> Self {
        self.config_digest = digest.into();
        self
    }
}

#[async_trait]
pub trait DecisionMaker: Send + Sync {
    fn spec(&self) -> &AdmSpec;

    /// Whether this ADM needs an alignment target.
    fn requires_target(&self) -> bool;

    /// Decide on `scenario`. Failures are reported inside the record, never
    /// raised. `prompt_override`, when set, replaces the system prompt.
    async fn choose_action(
        &self,
        scenario: &Scenario,
        choices: &[Choice],
        target: Option<&AttributeTarget>,
        prompt_override: Option<&str>,
    ) -> DecisionRecord;
}

type Factory = Arc<dyn Fn(&AdmSpec, &AdmContext) -> Result<Box<dyn DecisionMaker>, AdmError> + Send + Sync>;

/// Maps ADM kind names to constructors.
#[derive(Clone)]
pub struct AdmRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for AdmRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl AdmRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Baseline, prompt-aligned and Kaleido.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(BASELINE, |spec, ctx| {
            Ok(Box::new(PromptedAdm::new(spec.clone(), ctx.clone(), false)?))
        });
        r.register(PROMPT_ALIGNED, |spec, ctx| {
            Ok(Box::new(PromptedAdm::new(spec.clone(), ctx.clone(), true)?))
        });
        r.register(KALEIDO, |spec, ctx| {
            Ok(Box::new(KaleidoAdm::new(spec.clone(), ctx.clone())?))
        });
        r
    }

    pub fn register<F>(&mut self, kind: &str, factory: F)
    where
        F: Fn(&AdmSpec, &AdmContext) -> Result<Box<dyn DecisionMaker>, AdmError> + Send + Sync + 'static,
    {
        self.factories.insert(kind.to_string(), Arc::new(factory));
    }

    pub fn kinds(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn build(&self, spec: &AdmSpec, ctx: &AdmContext) -> Result<Box<dyn DecisionMaker>, AdmError> {
        let factory = self.factories.get(&spec.kind).ok_or_else(|| AdmError::UnknownKind {
            kind: spec.kind.clone(),
            known: self.kinds(),
        })?;
        factory(spec, ctx)
    }
}

/// Dispatch a decision through the ADM's uniform interface.
pub async fn choose_action(
    adm: &dyn DecisionMaker,
    scenario: &Scenario,
    target: Option<&AttributeTarget>,
) -> DecisionRecord {
    adm.choose_action(scenario, &scenario.choices, target, None)
        .await
}

/// An empty record for `scenario` carrying the ADM's identity, seed and the
/// run's config digest. Custom ADMs fill in the decision or error.
pub fn new_record(
    spec: &AdmSpec,
    ctx: &AdmContext,
    scenario: &Scenario,
    target: Option<&AttributeTarget>,
) -> DecisionRecord {
    RecordDraft::new(spec, ctx, scenario, target.cloned()).record()
}

/// Record skeleton shared by ADM implementations.
pub(crate) struct RecordDraft<'a> {
    pub spec: &'a AdmSpec,
    pub digest: &'a str,
    pub scenario: &'a Scenario,
    pub target: Option<AttributeTarget>,
    pub started: Instant,
}

impl<'a> RecordDraft<'a> {
    pub fn new(spec: &'a AdmSpec, ctx: &'a AdmContext, scenario: &'a Scenario, target: Option<AttributeTarget>) -> Self {
        Self {
            spec,
            digest: &ctx.config_digest,
            scenario,
            target,
            started: Instant::now(),
        }
    }

    pub fn record(&self) -> DecisionRecord {
        DecisionRecord {
            scenario_id: self.scenario.id.clone(),
            adm_id: self.spec.id.clone(),
            adm_kind: self.spec.kind.clone(),
            backend_id: self.spec.backend.id.clone(),
            target: self.target.clone(),
            system_prompt: String::new(),
            prompt_override: false,
            user_prompt: String::new(),
            raw_output: String::new(),
            decision: None,
            retries: 0,
            error: None,
            seed: self.spec.backend.gen_params.seed,
            config_digest: self.digest.to_string(),
            assessments: Vec::new(),
            timing: Timing {
                latency_ms: self.started.elapsed().as_secs_f64() * 1000.0,
            },
        }
    }

    pub fn config_error(&self, message: impl Into<String>) -> DecisionRecord {
        DecisionRecord {
            error: Some(ErrorDescriptor::new("configuration", message)),
            ..self.record()
        }
    }
}

/// Checks shared by every ADM before any backend call.
pub(crate) fn precheck(scenario: &Scenario, choices: &[Choice]) -> Result<(), String> {
    if choices != scenario.choices.as_slice() {
        return Err("choices must be the scenario's own choice list".into());
    }
    if choices.len() < 2 {
        return Err(format!("scenario `{}` has fewer than 2 choices", scenario.id));
    }
    Ok(())
}
