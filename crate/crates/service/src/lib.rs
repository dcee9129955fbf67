//! HTTP service hosting optimization runs.
//!
//! Runs live in memory. Each run owns its components and a state that is
//! replaced atomically after every completed iteration.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mapro_client::api::{
    ApiErrorBody, Health, IterationReport, JobState, OptimizeRequest, RunSnapshot, RunSpec, RunStatus,
    ScoresResponse, SolveRequest, SolveResponse,
};
use mapro_core::harness::gateway::AuditLog;
use mapro_core::harness::{render_report, ReportBundle, RunSettings, TaskBatch};
use mapro_core::inference::{brute_force_map, solve, SolveTrace};
use mapro_core::orchestrator::{
    base_prompts, initialize, restore, run_iteration, run_loop_observed, snapshot, Components,
    OptimizationState, OrchestratorError,
};
use mapro_core::refinement::TerminationPolicy;
use mapro_core::scoring::ScoreTables;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no run `{id}`"))
    }

    fn busy() -> Self {
        Self::new(StatusCode::CONFLICT, "run is busy with another request")
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let status = match &e {
            OrchestratorError::Frozen => StatusCode::CONFLICT,
            OrchestratorError::Scoring(_) | OrchestratorError::Refinement(_) => StatusCode::BAD_GATEWAY,
            OrchestratorError::Inference(_) | OrchestratorError::SchemaMismatch(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ApiErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct LastIteration {
    iteration: usize,
    tables: ScoreTables,
    trace: SolveTrace,
}

struct RunInner {
    state: OptimizationState,
    job: JobState,
    busy: bool,
    last: Option<LastIteration>,
}

struct Run {
    id: String,
    settings: RunSettings,
    components: Components,
    inner: Mutex<RunInner>,
}

impl Run {
    fn status(&self) -> RunStatus {
        let inner = self.inner.lock().expect("run lock");
        RunStatus {
            id: self.id.clone(),
            iteration: inner.state.iteration,
            k: inner.state.k,
            history: inner.state.history.clone(),
            best_pass_rate: inner.state.best.as_ref().map(|b| b.pass_rate),
            frozen: inner.state.frozen,
            job: inner.job.clone(),
            warnings: inner.state.warnings.clone(),
        }
    }

    /// Marks the run busy and hands out a copy of its state.
    fn checkout(&self) -> Result<OptimizationState, ApiError> {
        let mut inner = self.inner.lock().expect("run lock");
        if inner.busy {
            return Err(ApiError::busy());
        }
        if inner.state.frozen {
            return Err(OrchestratorError::Frozen.into());
        }
        inner.busy = true;
        Ok(inner.state.clone())
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    runs: Arc<RwLock<BTreeMap<String, Arc<Run>>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    fn run(&self, id: &str) -> Result<Arc<Run>, ApiError> {
        self.runs.read().expect("registry lock").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    fn insert(&self, settings: RunSettings, components: Components, state: OptimizationState) -> Arc<Run> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let run = Arc::new(Run {
            id: id.clone(),
            settings,
            components,
            inner: Mutex::new(RunInner { state, job: JobState::Idle, busy: false, last: None }),
        });
        self.runs.write().expect("registry lock").insert(id, run.clone());
        run
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/solve", post(solve_handler))
        .route("/v1/runs", post(create_run).get(list_runs))
        .route("/v1/runs/restore", post(restore_run))
        .route("/v1/runs/{id}", get(run_status).delete(delete_run))
        .route("/v1/runs/{id}/iterate", post(iterate))
        .route("/v1/runs/{id}/optimize", post(optimize))
        .route("/v1/runs/{id}/scores", get(scores))
        .route("/v1/runs/{id}/snapshot", get(snapshot_run))
        .route("/v1/runs/{id}/report", get(report))
        .with_state(state)
}

/// Serves until the listener fails or ctrl-c arrives.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn solve_handler(Json(req): Json<SolveRequest>) -> ApiResult<SolveResponse> {
    let graph = req.graph.into_graph().map_err(OrchestratorError::from)?;
    let sizes = req.tables.domain_sizes();
    req.tables
        .check_complete(&graph, &sizes)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let sol = solve(&graph, &req.tables.nodes, &req.tables.edges).map_err(OrchestratorError::from)?;
    let brute = if req.brute_force {
        Some(brute_force_map(&graph, &req.tables.nodes, &req.tables.edges).map_err(OrchestratorError::from)?)
    } else {
        None
    };
    Ok(Json(SolveResponse { assignment: sol.assignment, trace: sol.trace, brute_force: brute }))
}

fn components_for(settings: &RunSettings, spec_audit: Option<&std::path::Path>) -> Result<Components, ApiError> {
    let audit = match spec_audit {
        Some(p) => AuditLog::to_file(p.to_path_buf()),
        None => AuditLog::in_memory(),
    };
    Ok(Components::from_settings(settings, audit)?)
}

async fn create_run(State(app): State<AppState>, Json(spec): Json<RunSpec>) -> Result<(StatusCode, Json<RunStatus>), ApiError> {
    spec.settings.validate().map_err(OrchestratorError::from)?;
    let graph = spec.graph.into_graph().map_err(OrchestratorError::from)?;
    let tasks = TaskBatch::new(spec.tasks).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let components = components_for(&spec.settings, spec.audit_log.as_deref())?;
    let state = initialize(
        &graph,
        &base_prompts(&graph),
        tasks,
        spec.settings.k,
        spec.settings.seed,
        &components,
    )
    .await?;
    let run = app.insert(spec.settings, components, state);
    tracing::info!(id = %run.id, "run created");
    Ok((StatusCode::CREATED, Json(run.status())))
}

async fn list_runs(State(app): State<AppState>) -> Json<Vec<RunStatus>> {
    let runs: Vec<Arc<Run>> = app.runs.read().expect("registry lock").values().cloned().collect();
    Json(runs.iter().map(|r| r.status()).collect())
}

async fn run_status(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<RunStatus> {
    Ok(Json(app.run(&id)?.status()))
}

async fn delete_run(State(app): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let run = app.run(&id)?;
    if run.inner.lock().expect("run lock").busy {
        return Err(ApiError::busy());
    }
    app.runs.write().expect("registry lock").remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

async fn iterate(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<IterationReport> {
    let run = app.run(&id)?;
    let state = run.checkout()?;
    let result = run_iteration(&state, &run.components).await;
    let mut inner = run.inner.lock().expect("run lock");
    inner.busy = false;
    let out = result?;
    let record = out.state.trajectory.last().expect("one iteration completed").clone();
    inner.last = Some(LastIteration { iteration: record.iteration, tables: out.tables, trace: out.trace });
    inner.state = out.state;
    Ok(Json(IterationReport {
        iteration: record.iteration,
        pass_rate: record.pass_rate,
        passed: record.passed,
        tasks: record.tasks,
        joint_score: record.joint_score,
        chosen: record.chosen,
        method: record.method,
        message_count: record.message_count,
        global_feedback: out.global.items().to_vec(),
    }))
}

async fn optimize(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<OptimizeRequest>>,
) -> Result<(StatusCode, Json<RunStatus>), ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let run = app.run(&id)?;
    let policy = TerminationPolicy::new(
        req.patience.unwrap_or(run.settings.patience),
        req.epsilon.unwrap_or(run.settings.epsilon),
    )
    .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let max = req.max_iterations.unwrap_or(run.settings.max_iterations);
    if max == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "max_iterations must be at least 1"));
    }
    let state = run.checkout()?;
    run.inner.lock().expect("run lock").job = JobState::Running;

    let worker = run.clone();
    tokio::spawn(async move {
        let observer = worker.clone();
        let result = run_loop_observed(state, &worker.components, &policy, max, move |out| {
            let mut inner = observer.inner.lock().expect("run lock");
            inner.state = out.state.clone();
            inner.last = Some(LastIteration {
                iteration: out.state.iteration - 1,
                tables: out.tables.clone(),
                trace: out.trace.clone(),
            });
        })
        .await;
        let mut inner = worker.inner.lock().expect("run lock");
        inner.busy = false;
        match result {
            Ok(s) => {
                inner.state = s;
                inner.job = JobState::Finished;
            }
            Err(e) => {
                tracing::warn!(id = %worker.id, "optimization failed: {e}");
                inner.job = JobState::Failed { message: e.to_string() };
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(run.status())))
}

async fn scores(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<ScoresResponse> {
    let run = app.run(&id)?;
    let inner = run.inner.lock().expect("run lock");
    let last = inner
        .last
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no iteration has completed yet"))?;
    Ok(Json(ScoresResponse { iteration: last.iteration, tables: last.tables.clone(), trace: last.trace.clone() }))
}

async fn snapshot_run(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<RunSnapshot> {
    let run = app.run(&id)?;
    let state = run.inner.lock().expect("run lock").state.clone();
    Ok(Json(RunSnapshot { settings: run.settings.clone(), state }))
}

async fn restore_run(
    State(app): State<AppState>,
    Json(snap): Json<RunSnapshot>,
) -> Result<(StatusCode, Json<RunStatus>), ApiError> {
    let state = restore(&snapshot(&snap.state))?;
    let components = components_for(&snap.settings, None)?;
    let run = app.insert(snap.settings, components, state);
    tracing::info!(id = %run.id, "run restored");
    Ok((StatusCode::CREATED, Json(run.status())))
}

async fn report(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<ReportBundle> {
    let run = app.run(&id)?;
    let state = run.inner.lock().expect("run lock").state.clone();
    Ok(Json(render_report(&state)?))
}
