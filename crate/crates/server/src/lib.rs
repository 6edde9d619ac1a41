//! HTTP API over the experiment toolkit: browse datasets and registries, run
//! single decisions, compare two configurations, and read run reports.
//!
//! Every route lives under `/api/v1`. Requests carry their full configuration;
//! the only server-side state is the job table for slow decisions.

mod api;
mod config;
mod error;

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use align_core::adm::AdmSpec;
use align_core::backend::BackendSpec;
use align_core::dataset::load_dataset;
use align_core::prompts::TemplateRegistry;
use align_core::registry::AttributeRegistry;
use align_core::runner::Toolkit;
use align_core::Dataset;
use axum::Router;
use serde_json::Value;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tokio_util::task::TaskTracker;
use tower_http::services::ServeDir;
use tracing::info;

pub use api::{AdmRef, CompareRequest, CompareResponse, DecideRequest, DecisionConfig, JobStatus, RenderRequest, RunSummary};
pub use config::{ServerConfig, DEFAULT_JOB_THRESHOLD_MS, DEFAULT_MAX_IN_FLIGHT};
pub use error::ApiError;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("startup failed: {0}")]
    Startup(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub(crate) enum Job {
    Pending,
    Done { status: u16, body: Value },
}

pub(crate) struct Inner {
    pub datasets: BTreeMap<String, Dataset>,
    pub kit: Toolkit,
    pub backends: Vec<BackendSpec>,
    pub adms: Vec<AdmSpec>,
    pub runs_dir: Option<PathBuf>,
    pub job_threshold: Duration,
    pub max_in_flight: usize,
    pub jobs: Mutex<HashMap<String, Job>>,
    pub limits: Mutex<HashMap<String, Arc<Semaphore>>>,
    pub tracker: TaskTracker,
}

impl Inner {
    /// Semaphore bounding concurrent calls to one backend.
    pub fn limit(&self, backend_id: &str) -> Arc<Semaphore> {
        self.limits
            .lock()
            .expect("limits lock")
            .entry(backend_id.to_string())
            .or_insert_with(|| Arc::new(Semaphore::new(self.max_in_flight.max(1))))
            .clone()
    }
}

/// Shared handle to loaded datasets, registries and the job table.
#[derive(Clone)]
pub struct AppState(pub(crate) Arc<Inner>);

impl AppState {
    /// Load every dataset and registry named in `config`.
    pub fn load(config: &ServerConfig) -> Result<Self, ServerError> {
        let startup = |e: String| ServerError::Startup(e);
        let mut kit = Toolkit::default();
        if let Some(path) = &config.attributes {
            kit.attributes = Arc::new(AttributeRegistry::load(path).map_err(|e| startup(e.to_string()))?);
        }
        if let Some(path) = &config.templates {
            let mut t = TemplateRegistry::bundled();
            t.extend_from_file(path).map_err(|e| startup(e.to_string()))?;
            kit.templates = Arc::new(t);
        }
        let mut datasets = BTreeMap::new();
        for path in &config.datasets {
            let d = load_dataset(path, &kit.attributes).map_err(|e| startup(format!("{}: {e}", path.display())))?;
            info!(dataset = %d.id, scenarios = d.scenarios.len(), "loaded dataset");
            if let Some(prev) = datasets.insert(d.id.clone(), d) {
                return Err(startup(format!("dataset id `{}` is loaded twice", prev.id)));
            }
        }
        for b in &config.backends {
            b.validate().map_err(|e| startup(format!("backend `{}`: {e}", b.id)))?;
        }
        Ok(Self::from_parts(datasets, kit, config))
    }

    /// State over already-loaded datasets and a custom toolkit.
    pub fn from_parts(datasets: BTreeMap<String, Dataset>, kit: Toolkit, config: &ServerConfig) -> Self {
        Self(Arc::new(Inner {
            datasets,
            kit,
            backends: config.backends.clone(),
            adms: config.adms.clone(),
            runs_dir: config.runs_dir.clone(),
            job_threshold: Duration::from_millis(config.job_threshold_ms),
            max_in_flight: config.max_in_flight,
            jobs: Mutex::new(HashMap::new()),
            limits: Mutex::new(HashMap::new()),
            tracker: TaskTracker::new(),
        }))
    }
}

/// The API router, plus static UI assets when `static_dir` is set.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new().nest("/api/v1", api::routes()).with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Serve until `shutdown` resolves, then wait for in-flight jobs to finish.
pub async fn serve_on(
    listener: TcpListener,
    state: AppState,
    static_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    let tracker = state.0.tracker.clone();
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(shutdown)
        .await?;
    tracker.close();
    tracker.wait().await;
    Ok(())
}

/// Load `config`, bind, and serve until Ctrl-C.
pub async fn serve(config: ServerConfig) -> Result<(), ServerError> {
    let state = AppState::load(&config)?;
    let listener = TcpListener::bind(config.bind).await.map_err(|source| ServerError::Bind {
        addr: config.bind.to_string(),
        source,
    })?;
    info!(addr = %listener.local_addr()?, "listening");
    serve_on(listener, state, config.static_dir.clone(), async {
        let _ = tokio::signal::ctrl_c().await;
        info!("shutting down");
    })
    .await
}
