//! Run configurable LLM decision-makers over multiple-choice scenarios, steer
//! them toward attribute targets, and measure how well they align.

pub mod adm;
pub mod backend;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod prompts;
pub mod registry;
pub mod runner;
pub mod structured;

pub use adm::{choose_action, AdmContext, AdmRegistry, AdmSpec, DecisionMaker};
pub use backend::{BackendSpec, GenerationParams};
pub use dataset::{load_dataset, Dataset};
pub use metrics::{divergence, export_radar, score_run, AlignmentReport};
pub use model::{AttributeTarget, Choice, DecisionOutput, DecisionRecord, Scenario};
pub use prompts::{render_user_prompt, TemplateRegistry};
pub use registry::AttributeRegistry;
pub use runner::{resolve_config, run_experiment, ExperimentConfig, RunLog, Toolkit};
