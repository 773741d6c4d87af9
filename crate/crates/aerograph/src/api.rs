//! JSON service over a provisioned run directory.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use aerograph_core::dataio::REGIONS;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::context::{parse_region, RunContext};
use crate::error::{Error, ErrorKind, Result};
use crate::ops::{self, EvaluateRequest, SensitivityArtifact, SweepArtifact, SweepSpec};

/// Shared service state. The run context and sensitivity ranking never
/// change; the cached sweep is swapped whole when a sweep job finishes.
pub struct AppState {
    pub ctx: Arc<RunContext>,
    pub sensitivity: Option<Arc<SensitivityArtifact>>,
    sweep: RwLock<Option<Arc<SweepArtifact>>>,
    jobs: Mutex<BTreeMap<u64, Job>>,
    next_job: AtomicU64,
}

impl AppState {
    /// Loads the stored sensitivity ranking and policy sweep, if any. The run
    /// must have bias factors.
    pub fn new(ctx: RunContext) -> Result<Self> {
        ctx.factors()?;
        let sensitivity = ctx.read_artifact::<SensitivityArtifact>(ops::SENSITIVITY_FILE)?.map(Arc::new);
        let sweep = ctx.read_artifact::<SweepArtifact>(ops::SWEEP_FILE)?.map(Arc::new);
        Ok(Self {
            ctx: Arc::new(ctx),
            sensitivity,
            sweep: RwLock::new(sweep),
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
        })
    }

    pub fn cached_sweep(&self) -> Option<Arc<SweepArtifact>> {
        self.sweep.read().expect("sweep lock").clone()
    }

    fn sweep_or_409(&self) -> Result<Arc<SweepArtifact>> {
        self.cached_sweep().ok_or_else(|| {
            Error::new(
                ErrorKind::NotProvisioned,
                "no policy sweep is cached; run `aerograph policy` or submit a sweep job",
            )
        })
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/regions", get(regions))
        .route("/v1/sensitivity/rankings", get(rankings))
        .route("/v1/forecast", post(forecast))
        .route("/v1/policy/evaluate", post(evaluate))
        .route("/v1/policy/sweep", get(sweep))
        .route("/v1/jobs", post(submit_job))
        .route("/v1/jobs/{id}", get(job_status))
        .fallback(not_found)
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub code: String,
    pub message: String,
    pub field: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiErrorResponse {
    pub manifest_hash: String,
    pub error: ApiErrorBody,
}

pub fn status_of(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::Invalid => StatusCode::BAD_REQUEST,
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::NotProvisioned => StatusCode::CONFLICT,
        ErrorKind::Data | ErrorKind::Runtime => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

struct ApiError {
    manifest_hash: String,
    error: Error,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ApiErrorResponse {
            manifest_hash: self.manifest_hash,
            error: ApiErrorBody {
                code: self.error.code().to_string(),
                message: self.error.message,
                field: self.error.field,
            },
        };
        (status_of(self.error.kind), Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn reply<T>(state: &AppState, r: Result<T>) -> ApiResult<T> {
    r.map(Json).map_err(|error| ApiError {
        manifest_hash: state.ctx.manifest_hash.clone(),
        error,
    })
}

fn body<T>(r: std::result::Result<Json<T>, JsonRejection>) -> Result<T> {
    r.map(|Json(v)| v)
        .map_err(|e| Error::new(ErrorKind::Invalid, format!("invalid request body: {}", e.body_text())))
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(Error::runtime(format!("worker failed: {e}"))))
}

async fn not_found(State(state): State<Shared>) -> ApiError {
    ApiError {
        manifest_hash: state.ctx.manifest_hash.clone(),
        error: Error::new(ErrorKind::NotFound, "no such endpoint"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionInfo {
    pub index: usize,
    pub code: String,
    pub name: String,
    pub latest_raw_cases: f64,
    pub latest_smoothed_cases: f64,
    pub latest_outgoing_flights: f64,
    /// Flights to each region, in region order.
    pub latest_flights_to: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsResponse {
    pub manifest_hash: String,
    pub latest_date: NaiveDate,
    pub regions: Vec<RegionInfo>,
}

pub fn regions_response(ctx: &RunContext) -> RegionsResponse {
    let g = ctx.dataset.graphs.last().expect("a loaded dataset has days");
    let n = REGIONS.len();
    let outgoing = g.outgoing_flights();
    RegionsResponse {
        manifest_hash: ctx.manifest_hash.clone(),
        latest_date: g.date,
        regions: REGIONS
            .iter()
            .map(|r| {
                let i = r.index();
                RegionInfo {
                    index: i,
                    code: r.code().to_string(),
                    name: r.name().to_string(),
                    latest_raw_cases: g.raw_cases[i],
                    latest_smoothed_cases: g.smoothed_cases[i],
                    latest_outgoing_flights: outgoing[i],
                    latest_flights_to: g.raw_flights[i * n..(i + 1) * n].to_vec(),
                }
            })
            .collect(),
    }
}

async fn regions(State(state): State<Shared>) -> ApiResult<RegionsResponse> {
    reply(&state, Ok(regions_response(&state.ctx)))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingsQuery {
    pub window: Option<String>,
}

fn parse_date(field: &str, s: &str) -> Result<NaiveDate> {
    s.parse::<NaiveDate>()
        .map_err(|e| Error::invalid(field, format!("`{s}` is not a YYYY-MM-DD date: {e}")))
}

async fn rankings(
    State(state): State<Shared>,
    query: std::result::Result<Query<RankingsQuery>, QueryRejection>,
) -> ApiResult<ops::RankingsResponse> {
    let result = (|| {
        let Query(q) = query.map_err(|e| Error::new(ErrorKind::Invalid, e.body_text()))?;
        let art = state.sensitivity.as_ref().ok_or_else(|| {
            Error::new(ErrorKind::NotProvisioned, "no sensitivity ranking; run `aerograph sensitivity`")
        })?;
        let window = q.window.as_deref().map(|w| parse_date("window", w)).transpose()?;
        ops::rankings(art, window)
    })();
    reply(&state, result)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastRequest {
    pub window_start: NaiveDate,
    #[serde(default = "default_days")]
    pub days: usize,
    pub models: Option<usize>,
}

fn default_days() -> usize {
    aerograph_core::forecast::DEFAULT_HORIZON
}

async fn forecast(
    State(state): State<Shared>,
    req: std::result::Result<Json<ForecastRequest>, JsonRejection>,
) -> ApiResult<ops::ForecastResponse> {
    let result = match body(req) {
        Ok(req) => {
            let ctx = state.ctx.clone();
            blocking(move || ops::forecast_window(&ctx, req.window_start, req.days, req.models)).await
        }
        Err(e) => Err(e),
    };
    reply(&state, result)
}

async fn evaluate(
    State(state): State<Shared>,
    req: std::result::Result<Json<EvaluateRequest>, JsonRejection>,
) -> ApiResult<ops::PolicyEvaluation> {
    let result = match body(req) {
        // validate before the 409 check so bad input is reported as such
        Ok(req) => match ops::parse_reductions(&req.reductions).and_then(|_| state.sweep_or_409()) {
            Ok(sweep) => {
                let ctx = state.ctx.clone();
                blocking(move || ops::evaluate(&ctx, &sweep, &req)).await
            }
            Err(e) => Err(e),
        },
        Err(e) => Err(e),
    };
    reply(&state, result)
}

async fn sweep(State(state): State<Shared>) -> ApiResult<SweepArtifact> {
    let result = state.sweep_or_409().map(|s| (*s).clone());
    reply(&state, result)
}

/// Body of `POST /v1/jobs`: a policy sweep. Levels are fractions.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub nodes: Option<Vec<String>>,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    pub max_policies: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub models: Option<usize>,
    #[serde(default = "default_days")]
    pub days: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_levels() -> Vec<f64> {
    aerograph_core::analysis::DEFAULT_LEVELS.to_vec()
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub manifest_hash: String,
    pub id: u64,
    pub state: JobState,
    pub policies: Option<usize>,
    pub error: Option<ApiErrorBody>,
}

fn sweep_spec(ctx: &RunContext, req: &JobRequest) -> Result<SweepSpec> {
    let nodes = match &req.nodes {
        Some(list) => list.iter().map(|s| parse_region("nodes", s)).collect::<Result<Vec<_>>>()?,
        None => ops::default_nodes(ctx)?,
    };
    Ok(SweepSpec {
        nodes,
        levels: req.levels.clone(),
        max_policies: req.max_policies,
        seed: req.seed,
        models: req.models.unwrap_or_else(|| ops::default_policy_models(ctx)),
        days: req.days,
        window_stride: req.stride,
    })
}

async fn submit_job(
    State(state): State<Shared>,
    req: std::result::Result<Json<JobRequest>, JsonRejection>,
) -> std::result::Result<(StatusCode, Json<Job>), ApiError> {
    let spec = body(req).and_then(|r| sweep_spec(&state.ctx, &r)).and_then(|spec| {
        ops::validate_sweep_spec(&state.ctx, &spec)?;
        Ok(spec)
    });
    let spec = reply(&state, spec)?.0;
    let id = state.next_job.fetch_add(1, Ordering::SeqCst);
    let job = Job {
        manifest_hash: state.ctx.manifest_hash.clone(),
        id,
        state: JobState::Running,
        policies: None,
        error: None,
    };
    state.jobs.lock().expect("jobs lock").insert(id, job.clone());

    let worker = state.clone();
    tokio::spawn(async move {
        let ctx = worker.ctx.clone();
        let outcome = blocking(move || ops::compute_sweep(&ctx, &spec)).await;
        let mut jobs = worker.jobs.lock().expect("jobs lock");
        let entry = jobs.get_mut(&id).expect("submitted job is tracked");
        match outcome {
            Ok(art) => {
                entry.policies = Some(art.sweep.results.len());
                *worker.sweep.write().expect("sweep lock") = Some(Arc::new(art));
                entry.state = JobState::Succeeded;
            }
            Err(e) => {
                entry.error = Some(ApiErrorBody {
                    code: e.code().to_string(),
                    message: e.message,
                    field: e.field,
                });
                entry.state = JobState::Failed;
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn job_status(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Job> {
    let result = id
        .parse::<u64>()
        .ok()
        .and_then(|id| state.jobs.lock().expect("jobs lock").get(&id).cloned())
        .ok_or_else(|| Error::new(ErrorKind::NotFound, format!("no job {id}")).with_field("id"));
    reply(&state, result)
}

/// Serves until the process is stopped.
pub async fn serve(state: AppState, host: &str, port: u16) -> Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .map_err(|e| Error::runtime(format!("cannot listen on {host}:{port}: {e}")))?;
    log::info!("listening on http://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    axum::serve(listener, router(Arc::new(state)))
        .await
        .map_err(|e| Error::runtime(e.to_string()))
}
