//! Experiment driver: resolve config, load data, run the ADM over every
//! selected scenario, and stream records to the run log in scenario order.

mod config;
mod log;

use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use futures::stream::{self, StreamExt};
use thiserror::Error;
use tracing::info;

pub use config::{apply_override, config_digest, resolve_config, resolve_config_str, ConfigError, ExperimentConfig, DEFAULT_PARALLELISM};
pub use log::{
    replay, replay_str, strip_wall_clock, HeaderTiming, LogError, LogLine, LogWriter, Replay, RunHeader, RunLog,
    LOG_FORMAT, TOOL_VERSION,
};

use crate::adm::{AdmContext, AdmError, AdmRegistry};
use crate::dataset::{load_dataset, Dataset, DatasetError};
use crate::prompts::{PromptError, TemplateRegistry};
use crate::registry::{AttributeRegistry, RegistryError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Adm(#[from] AdmError),
    #[error(transparent)]
    Log(#[from] LogError),
}

/// How a run ended. Maps onto CLI exit codes 0 and 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Clean,
    CompletedWithFailures,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Clean => 0,
            RunStatus::CompletedWithFailures => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    pub status: RunStatus,
}

/// Registries an experiment runs against.
#[derive(Clone)]
pub struct Toolkit {
    pub attributes: Arc<AttributeRegistry>,
    pub templates: Arc<TemplateRegistry>,
    pub adms: AdmRegistry,
}

impl Default for Toolkit {
    fn default() -> Self {
        Self {
            attributes: Arc::new(AttributeRegistry::bundled()),
            templates: Arc::new(TemplateRegistry::bundled()),
            adms: AdmRegistry::standard(),
        }
    }
}

impl Toolkit {
    /// Bundled registries, with any replacements named in `config`.
    pub fn for_config(config: &ExperimentConfig) -> Result<Self, RunError> {
        let mut kit = Self::default();
        if let Some(path) = &config.attributes {
            kit.attributes = Arc::new(AttributeRegistry::load(path)?);
        }
        if let Some(path) = &config.templates {
            let mut t = TemplateRegistry::bundled();
            t.extend_from_file(path)?;
            kit.templates = Arc::new(t);
        }
        Ok(kit)
    }

    pub fn context(&self, digest: &str) -> AdmContext {
        AdmContext::new(self.attributes.clone(), self.templates.clone()).with_digest(digest)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or_default()
}

/// Resolve `config_path` with overrides, load its dataset, and run.
pub async fn run_from_file(config_path: &Path, overrides: &[String]) -> Result<RunOutcome, RunError> {
    let config = resolve_config(config_path, overrides)?;
    let kit = Toolkit::for_config(&config)?;
    let dataset = load_dataset(&config.dataset, &kit.attributes)?;
    run_experiment(&config, &dataset, &kit).await
}

/// Run every selected scenario. Per-scenario failures land in their records;
/// only setup problems are returned as errors.
pub async fn run_experiment(config: &ExperimentConfig, dataset: &Dataset, kit: &Toolkit) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let digest = config.digest();
    let adm = kit.adms.build(&config.adm, &kit.context(&digest))?;

    let target = config
        .target
        .as_ref()
        .map(|t| kit.attributes.validate(t))
        .transpose()?;
    if adm.requires_target() && target.is_none() {
        return Err(ConfigError::Invalid(format!("ADM kind `{}` requires a target", config.adm.kind)).into());
    }
    let scenarios = dataset.filtered(&kit.attributes, config.filter.as_deref())?;

    let header = RunHeader {
        format: LOG_FORMAT.into(),
        tool_version: TOOL_VERSION.into(),
        run_id: config.run_id.clone(),
        config_digest: digest,
        dataset_id: dataset.id.clone(),
        scenario_count: scenarios.len(),
        config: config.clone(),
        timing: HeaderTiming {
            started_unix_ms: now_ms(),
        },
    };
    let mut writer = LogWriter::create(&config.output, &header)?;
    info!(run = %config.run_id, scenarios = scenarios.len(), "starting run");

    let adm = adm.as_ref();
    let target = target.as_ref();
    // `buffered` keeps up to `parallelism` decisions in flight and yields them
    // in input order.
    let mut results = stream::iter(scenarios)
        .map(|s| adm.choose_action(s, &s.choices, target, None))
        .buffered(config.parallelism);

    let mut records = Vec::new();
    while let Some(record) = results.next().await {
        writer.append(&record)?;
        records.push(record);
    }
    let log = RunLog { header, records };
    let failures = log.failures();
    info!(run = %config.run_id, failures, "run finished");
    let status = if failures == 0 {
        RunStatus::Clean
    } else {
        RunStatus::CompletedWithFailures
    };
    Ok(RunOutcome { log, status })
}
