//! Route handlers and request/response bodies.

use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use align_core::adm::{AdmSpec, DecisionMaker};
use align_core::backend::{mock_backend, BackendSpec, GenerationParams, MockScript};
use align_core::dataset::load_dataset;
use align_core::metrics::{divergence, score_run, AlignmentReport, DivergenceReport};
use align_core::model::{AttributeTarget, DecisionRecord, Scenario};
use align_core::prompts::RenderedPrompt;
use align_core::runner::{config_digest, replay, Replay};
use align_core::structured::RepairPolicy;
use align_core::Dataset;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;
use uuid::Uuid;

use crate::{ApiError, AppState, Inner, Job};

pub(crate) fn routes() -> Router<AppState> {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/datasets/{id}/scenarios", get(list_scenarios))
        .route("/datasets/{id}/scenarios/{sid}", get(get_scenario))
        .route("/adms", get(list_adms))
        .route("/backends", get(list_backends))
        .route("/attributes", get(list_attributes))
        .route("/prompts/render", post(render_prompt))
        .route("/decide", post(decide))
        .route("/compare", post(compare))
        .route("/jobs/{id}", get(get_job))
        .route("/runs", get(list_runs))
        .route("/runs/{id}/report", get(run_report))
        .route("/runs/{id}/divergence", get(run_divergence))
}

type ApiResult<T> = Result<T, ApiError>;

/// An ADM by preset id or registered kind, or a full inline spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdmRef {
    Named(String),
    Inline(Box<AdmSpec>),
}

/// One side of a decision request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionConfig {
    pub adm: AdmRef,
    /// Backend id from the server's list; replaces the ADM's own backend.
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub target: Option<AttributeTarget>,
    /// Replaces the resolved system prompt verbatim.
    #[serde(default)]
    pub prompt_override: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecideRequest {
    /// May be omitted when exactly one dataset is loaded.
    #[serde(default)]
    pub dataset: Option<String>,
    pub scenario_id: String,
    pub config: DecisionConfig,
    #[serde(default)]
    pub gen_params: Option<GenerationParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRequest {
    #[serde(default)]
    pub dataset: Option<String>,
    pub scenario_id: String,
    pub config_a: DecisionConfig,
    pub config_b: DecisionConfig,
    /// Applied to both sides when set.
    #[serde(default)]
    pub gen_params: Option<GenerationParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResponse {
    pub scenario_id: String,
    pub record_a: DecisionRecord,
    pub record_b: DecisionRecord,
    /// Both sides decided and chose differently.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub adm_kind: String,
    #[serde(default)]
    pub target: Option<AttributeTarget>,
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub scenario_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    /// `pending` or `done`.
    pub status: String,
    /// HTTP status the finished request would have returned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub run_id: String,
    pub dataset_id: String,
    pub adm_id: String,
    pub adm_kind: String,
    pub target: Option<AttributeTarget>,
    pub config_digest: String,
    pub records: usize,
    pub failures: usize,
    pub truncated: bool,
    pub warnings: Vec<String>,
}

fn dataset<'a>(inner: &'a Inner, id: Option<&str>) -> ApiResult<&'a Dataset> {
    match id {
        Some(id) => inner.datasets.get(id).ok_or_else(|| ApiError::not_found("dataset", id)),
        None if inner.datasets.len() == 1 => Ok(inner.datasets.values().next().expect("one dataset")),
        None => Err(ApiError::bad_request("`dataset` is required when several datasets are loaded")),
    }
}

fn scenario<'a>(d: &'a Dataset, sid: &str) -> ApiResult<&'a Scenario> {
    d.scenario(sid).ok_or_else(|| ApiError::not_found("scenario", sid))
}

async fn list_datasets(State(s): State<AppState>) -> Json<Value> {
    let reg = &s.0.kit.attributes;
    Json(Value::Array(
        s.0.datasets
            .values()
            .map(|d| {
                json!({
                    "id": d.id,
                    "domain": d.domain,
                    "scenario_count": d.scenarios.len(),
                    "attributes": d.attributes(reg),
                    "label_keys": d.label_keys(),
                })
            })
            .collect(),
    ))
}

#[derive(Deserialize)]
struct ScenarioQuery {
    filter: Option<String>,
}

async fn list_scenarios(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ScenarioQuery>,
) -> ApiResult<Json<Value>> {
    let d = dataset(&s.0, Some(&id))?;
    let list = d
        .list_scenarios(&s.0.kit.attributes, q.filter.as_deref())
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(json!(list)))
}

async fn get_scenario(State(s): State<AppState>, Path((id, sid)): Path<(String, String)>) -> ApiResult<Json<Scenario>> {
    let d = dataset(&s.0, Some(&id))?;
    Ok(Json(scenario(d, &sid)?.clone()))
}

fn probe_spec(kind: &str) -> AdmSpec {
    AdmSpec {
        id: kind.into(),
        kind: kind.into(),
        backend: mock_backend(MockScript::always(0)),
        system_prompt_override: None,
        repair: RepairPolicy::default(),
        kaleido: None,
    }
}

async fn list_adms(State(s): State<AppState>) -> Json<Value> {
    let ctx = s.0.kit.context("");
    let kinds: Vec<Value> = s
        .0
        .kit
        .adms
        .kinds()
        .into_iter()
        .map(|kind| {
            let requires_target = s
                .0
                .kit
                .adms
                .build(&probe_spec(&kind), &ctx)
                .map(|a| a.requires_target())
                .ok();
            json!({"kind": kind, "requires_target": requires_target})
        })
        .collect();
    Json(json!({"kinds": kinds, "presets": s.0.adms}))
}

async fn list_backends(State(s): State<AppState>) -> Json<Vec<BackendSpec>> {
    Json(s.0.backends.clone())
}

async fn list_attributes(State(s): State<AppState>) -> Json<Value> {
    Json(json!({
        "attributes": s.0.kit.attributes.entries(),
        "keys": s.0.kit.attributes.keys(),
    }))
}

async fn render_prompt(State(s): State<AppState>, Json(req): Json<RenderRequest>) -> ApiResult<Json<RenderedPrompt>> {
    let scen = match &req.scenario_id {
        Some(sid) => Some(scenario(dataset(&s.0, req.dataset.as_deref())?, sid)?),
        None => None,
    };
    s.0.kit
        .templates
        .render_system_prompt(&s.0.kit.attributes, &req.adm_kind, req.target.as_ref(), scen)
        .map(Json)
        .map_err(|e| ApiError::bad_request(e.to_string()))
}

/// A decision ready to execute: all configuration checks already passed.
struct Prepared {
    adm: Box<dyn DecisionMaker>,
    scenario: Scenario,
    target: Option<AttributeTarget>,
    prompt_override: Option<String>,
    backend_id: String,
}

fn resolve_spec(inner: &Inner, cfg: &DecisionConfig) -> ApiResult<AdmSpec> {
    let backend = cfg
        .backend
        .as_deref()
        .map(|id| {
            inner
                .backends
                .iter()
                .find(|b| b.id == id)
                .cloned()
                .ok_or_else(|| ApiError::not_found("backend", id))
        })
        .transpose()?;
    let mut spec = match &cfg.adm {
        AdmRef::Inline(spec) => (**spec).clone(),
        AdmRef::Named(name) => match inner.adms.iter().find(|a| &a.id == name) {
            Some(preset) => preset.clone(),
            None if inner.kit.adms.kinds().contains(name) => {
                let Some(b) = &backend else {
                    return Err(ApiError::bad_request(format!(
                        "ADM kind `{name}` needs a `backend` id"
                    )));
                };
                AdmSpec {
                    backend: b.clone(),
                    ..probe_spec(name)
                }
            }
            None => return Err(ApiError::not_found("ADM preset or kind", name)),
        },
    };
    if let Some(b) = backend {
        spec.backend = b;
    }
    Ok(spec)
}

fn prepare(
    inner: &Inner,
    dataset_id: Option<&str>,
    scenario_id: &str,
    cfg: &DecisionConfig,
    gen_params: Option<&GenerationParams>,
) -> ApiResult<Prepared> {
    let d = dataset(inner, dataset_id)?;
    let scen = scenario(d, scenario_id)?.clone();
    let mut spec = resolve_spec(inner, cfg)?;
    if let Some(p) = gen_params {
        spec.backend.gen_params = p.clone();
    }
    spec.backend
        .validate()
        .map_err(|e| ApiError::bad_request(e.to_string()).with_detail(json!({"backend": spec.backend.id})))?;
    let target = cfg
        .target
        .as_ref()
        .map(|t| inner.kit.attributes.validate(t))
        .transpose()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;

    let digest = config_digest(&json!({
        "dataset": d.id,
        "scenario_id": scen.id,
        "adm": spec,
        "target": target,
        "prompt_override": cfg.prompt_override,
    }));
    let adm = inner
        .kit
        .adms
        .build(&spec, &inner.kit.context(&digest))
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    if adm.requires_target() && target.is_none() {
        return Err(ApiError::bad_request(format!("ADM kind `{}` requires a target", spec.kind)));
    }
    Ok(Prepared {
        adm,
        scenario: scen,
        target,
        prompt_override: cfg.prompt_override.clone(),
        backend_id: spec.backend.id,
    })
}

async fn execute(inner: &Inner, p: Prepared) -> DecisionRecord {
    let sem = inner.limit(&p.backend_id);
    let _permit = sem.acquire_owned().await.expect("semaphore is never closed");
    p.adm
        .choose_action(&p.scenario, &p.scenario.choices, p.target.as_ref(), p.prompt_override.as_deref())
        .await
}

/// HTTP status for a single decision record.
fn record_status(r: &DecisionRecord) -> StatusCode {
    match &r.error {
        None => StatusCode::OK,
        Some(e) if e.kind == "configuration" => StatusCode::BAD_REQUEST,
        Some(_) => StatusCode::BAD_GATEWAY,
    }
}

fn record_body(r: DecisionRecord) -> (StatusCode, Value) {
    let status = record_status(&r);
    if status == StatusCode::OK {
        return (status, json!(r));
    }
    let err = r.error.clone().expect("non-OK record has an error");
    let code = if status == StatusCode::BAD_REQUEST {
        "configuration"
    } else {
        "decision_failed"
    };
    let body = ApiError::new(status, code, err.message).with_detail(r);
    (status, json!(body))
}

/// Run `work` in a tracked task. Answer inline if it finishes within the job
/// threshold, otherwise answer 202 with a job id to poll.
async fn run_as_job<F>(state: &AppState, work: F) -> Response
where
    F: std::future::Future<Output = (StatusCode, Value)> + Send + 'static,
{
    let id = Uuid::new_v4().to_string();
    state.0.jobs.lock().expect("jobs lock").insert(id.clone(), Job::Pending);
    let inner = state.0.clone();
    let job_id = id.clone();
    let mut handle = state.0.tracker.spawn(async move {
        let (status, body) = work.await;
        inner.jobs.lock().expect("jobs lock").insert(
            job_id,
            Job::Done {
                status: status.as_u16(),
                body: body.clone(),
            },
        );
        (status, body)
    });
    match tokio::time::timeout(state.0.job_threshold, &mut handle).await {
        Ok(Ok((status, body))) => {
            state.0.jobs.lock().expect("jobs lock").remove(&id);
            (status, Json(body)).into_response()
        }
        Ok(Err(e)) => {
            state.0.jobs.lock().expect("jobs lock").remove(&id);
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()).into_response()
        }
        Err(_) => (
            StatusCode::ACCEPTED,
            Json(json!({"job_id": id, "status": "pending", "poll": format!("/api/v1/jobs/{id}")})),
        )
            .into_response(),
    }
}

async fn decide(State(s): State<AppState>, Json(req): Json<DecideRequest>) -> ApiResult<Response> {
    let p = prepare(&s.0, req.dataset.as_deref(), &req.scenario_id, &req.config, req.gen_params.as_ref())?;
    let inner = s.0.clone();
    Ok(run_as_job(&s, async move { record_body(execute(&inner, p).await) }).await)
}

async fn compare(State(s): State<AppState>, Json(req): Json<CompareRequest>) -> ApiResult<Response> {
    let side = |cfg: &DecisionConfig, name: &str| {
        prepare(&s.0, req.dataset.as_deref(), &req.scenario_id, cfg, req.gen_params.as_ref()).map_err(|mut e| {
            e.detail = Box::new(json!({"side": name, "detail": e.detail}));
            e
        })
    };
    let a = side(&req.config_a, "a")?;
    let b = side(&req.config_b, "b")?;
    let inner: Arc<Inner> = s.0.clone();
    let scenario_id = req.scenario_id.clone();
    Ok(run_as_job(&s, async move {
        let (record_a, record_b) = tokio::join!(execute(&inner, a), execute(&inner, b));
        let diverged = match (record_a.chosen(), record_b.chosen()) {
            (Some(x), Some(y)) => x != y,
            _ => false,
        };
        let resp = CompareResponse {
            scenario_id,
            record_a,
            record_b,
            diverged,
        };
        (StatusCode::OK, json!(resp))
    })
    .await)
}

async fn get_job(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    let jobs = s.0.jobs.lock().expect("jobs lock");
    let job = jobs.get(&id).ok_or_else(|| ApiError::not_found("job", &id))?;
    Ok(Json(match job {
        Job::Pending => JobStatus {
            job_id: id,
            status: "pending".into(),
            result_status: None,
            result: None,
        },
        Job::Done { status, body } => JobStatus {
            job_id: id,
            status: "done".into(),
            result_status: Some(*status),
            result: Some(body.clone()),
        },
    }))
}

fn runs_dir(inner: &Inner) -> ApiResult<&FsPath> {
    inner
        .runs_dir
        .as_deref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_runs_dir", "the server has no runs directory"))
}

fn run_path(inner: &Inner, id: &str) -> ApiResult<PathBuf> {
    let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !id.starts_with('.');
    if !valid {
        return Err(ApiError::bad_request(format!("invalid run id `{id}`")));
    }
    let path = runs_dir(inner)?.join(format!("{id}.jsonl"));
    if !path.is_file() {
        return Err(ApiError::not_found("run", id));
    }
    Ok(path)
}

fn load_run(inner: &Inner, id: &str) -> ApiResult<Replay> {
    replay(&run_path(inner, id)?).map_err(|e| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_log", e.to_string()).with_detail(json!({"run": id}))
    })
}

async fn list_runs(State(s): State<AppState>) -> ApiResult<Json<Vec<Value>>> {
    let dir = runs_dir(&s.0)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let id = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        match replay(&path) {
            Ok(r) => out.push(json!(RunSummary {
                id,
                run_id: r.log.header.run_id.clone(),
                dataset_id: r.log.header.dataset_id.clone(),
                adm_id: r.log.header.config.adm.id.clone(),
                adm_kind: r.log.header.config.adm.kind.clone(),
                target: r.log.header.config.target.clone(),
                config_digest: r.log.header.config_digest.clone(),
                records: r.log.records.len(),
                failures: r.log.failures(),
                truncated: r.truncated,
                warnings: r.warnings,
            })),
            Err(e) => {
                warn!(run = %id, "unreadable run log: {e}");
                out.push(json!({"id": id, "error": e.to_string()}));
            }
        }
    }
    Ok(Json(out))
}

#[derive(Deserialize)]
struct ReportQuery {
    #[serde(default)]
    by_attribute: bool,
}

async fn run_report(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Json<Value>> {
    let r = load_run(&s.0, &id)?;
    let header = &r.log.header;
    let loaded;
    let d = match s.0.datasets.get(&header.dataset_id) {
        Some(d) => d,
        None => {
            loaded = load_dataset(&header.config.dataset, &s.0.kit.attributes).map_err(|e| {
                ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "dataset_unavailable",
                    format!("dataset `{}` for run `{id}` is not loaded: {e}", header.dataset_id),
                )
            })?;
            &loaded
        }
    };
    let mut report: AlignmentReport = score_run(&r.log, d);
    if q.by_attribute {
        report = report.by_attribute(&s.0.kit.attributes);
    }
    Ok(Json(json!({
        "run": id,
        "run_id": header.run_id,
        "report": report,
        "warnings": r.warnings,
    })))
}

#[derive(Deserialize)]
struct DivergenceQuery {
    other: String,
}

async fn run_divergence(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<DivergenceQuery>,
) -> ApiResult<Json<DivergenceReport>> {
    let a = load_run(&s.0, &id)?;
    let b = load_run(&s.0, &q.other)?;
    divergence(&a.log, &b.log)
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_overlap", e.to_string()))
}
