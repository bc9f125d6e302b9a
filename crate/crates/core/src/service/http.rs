use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::session::{ContextSelector, DeployRequest, Deployment, Session};
use super::{ErrorEnvelope, ServiceError, SESSION_TTL};
use crate::cost::PriorityVector;
use crate::kb::{Description, KnowledgeBase};
use crate::planner::SolveOptions;
use crate::runtime::{error_record_schema, record_schema, to_xml, Executor, RunLimit};

/// Method, path and summary of every route; `/spec` is rendered from this table.
pub const ENDPOINTS: &[(&str, &str, &str)] = &[
    ("GET", "/health", "Liveness, KB version and live session count"),
    ("GET", "/spec", "This endpoint table with request and response notes"),
    ("GET", "/kb", "Current knowledge base document and version"),
    ("POST", "/kb", "Add one description: {\"sensor\": {...}} or {\"component\": {...}}"),
    ("POST", "/sessions", "Start a session; returns the session view"),
    ("GET", "/sessions/{id}", "Session view: phase, answers, task, choice, deployment"),
    ("GET", "/sessions/{id}/questions", "Most discriminating unanswered questions; query k (default 3)"),
    ("POST", "/sessions/{id}/answers", "Answer questions: {\"question\", \"value\"} or {\"answers\": [...]}"),
    ("GET", "/sessions/{id}/tasks", "Tasks consistent with the answers so far"),
    ("POST", "/sessions/{id}/task", "Select a task: {\"taskId\"}"),
    ("POST", "/sessions/{id}/solve", "Compose, ground and rank solutions; optional {\"maxDepth\", \"allowConversions\", \"maxSolutions\"}; 422 with gapReport when unsolvable"),
    ("GET", "/sessions/{id}/solutions", "Ranked solutions with cost breakdowns, best first"),
    ("POST", "/sessions/{id}/priorities", "Set priorities {\"weights\": {...}} and re-rank"),
    ("GET", "/sessions/{id}/advice", "Gap report of the last failed solve"),
    ("GET", "/sessions/{id}/context-offers", "Context offers of a solution; query solution (default chosen or best)"),
    ("POST", "/sessions/{id}/context", "Choose a solution and accept offers: {\"solution\", \"accept\": [{\"source\", \"property\"}]}"),
    ("POST", "/sessions/{id}/deploy", "Generate and register a pipeline: {\"solution\", \"records\", \"realtime\", \"mode\", \"projection\"}"),
    ("GET", "/pipelines/{id}", "Deployment with its pipeline definition"),
    ("GET", "/pipelines/{id}/xml", "Virtual sensor document of the pipeline"),
    ("GET", "/pipelines/{id}/schema", "JSON Schema of the pipeline's stream items"),
    ("GET", "/pipelines/{id}/stream", "Newline-delimited JSON stream; query records (0 = unbounded) and realtime"),
];

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// File that accepted descriptions are written back to.
    pub kb_path: Option<PathBuf>,
    pub session_ttl: Duration,
    pub solve: SolveOptions,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { kb_path: None, session_ttl: SESSION_TTL, solve: SolveOptions::default() }
    }
}

pub struct AppState {
    kb: RwLock<Arc<KnowledgeBase>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    pipelines: Mutex<HashMap<String, Arc<Deployment>>>,
    config: ServiceConfig,
    counter: AtomicU64,
    started: Instant,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    pub fn new(kb: KnowledgeBase, config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            kb: RwLock::new(Arc::new(kb)),
            sessions: Mutex::new(HashMap::new()),
            pipelines: Mutex::new(HashMap::new()),
            config,
            counter: AtomicU64::new(0),
            started: Instant::now(),
        })
    }

    pub fn kb(&self) -> Arc<KnowledgeBase> {
        self.kb.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn next_id(&self, prefix: &str) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let salt = self.started.elapsed().as_nanos() as u64;
        format!("{prefix}{:08x}{n:04x}", (salt ^ rand::random::<u64>()) as u32)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        let mut sessions = lock(&self.sessions);
        let ttl = self.config.session_ttl;
        sessions.retain(|_, s| lock(s).idle_for() < ttl);
        let s = sessions.get(id).cloned().ok_or_else(|| ServiceError::NotFound { kind: "session", id: id.to_string() })?;
        lock(&s).touch();
        Ok(s)
    }

    fn pipeline(&self, id: &str) -> Result<Arc<Deployment>, ServiceError> {
        lock(&self.pipelines)
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound { kind: "pipeline", id: id.to_string() })
    }

    /// Adds a description and, when the service owns a KB file, rewrites it
    /// through a temporary file so a crash never leaves it half written.
    fn add_description(&self, record: Description) -> Result<Arc<KnowledgeBase>, ServiceError> {
        let mut guard = self.kb.write().unwrap_or_else(|e| e.into_inner());
        let next = Arc::new(guard.add(record)?);
        if let Some(path) = &self.config.kb_path {
            let tmp = path.with_extension("tmp");
            let io = |source| crate::kb::KbError::Io { path: path.display().to_string(), source };
            std::fs::write(&tmp, next.to_json()).map_err(io)?;
            std::fs::rename(&tmp, path).map_err(io)?;
        }
        *guard = next.clone();
        Ok(next)
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body: ErrorEnvelope = self.body();
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

/// Parses a JSON body; an empty body means the type's default.
fn parse<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    parse_required(body)
}

fn parse_required<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/spec", get(api_description))
        .route("/kb", get(get_kb).post(post_kb))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/questions", get(questions))
        .route("/sessions/{id}/answers", post(answers))
        .route("/sessions/{id}/tasks", get(tasks))
        .route("/sessions/{id}/task", post(select_task))
        .route("/sessions/{id}/solve", post(solve))
        .route("/sessions/{id}/solutions", get(solutions))
        .route("/sessions/{id}/priorities", post(priorities))
        .route("/sessions/{id}/advice", get(advice))
        .route("/sessions/{id}/context-offers", get(context_offers))
        .route("/sessions/{id}/context", post(context))
        .route("/sessions/{id}/deploy", post(deploy))
        .route("/pipelines/{id}", get(get_pipeline))
        .route("/pipelines/{id}/xml", get(pipeline_xml))
        .route("/pipelines/{id}/schema", get(pipeline_schema))
        .route("/pipelines/{id}/stream", get(stream))
        .fallback(|| async { ServiceError::NotFound { kind: "route", id: String::new() } })
        .with_state(state)
}

async fn health(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "kbVersion": st.kb().version(), "sessions": lock(&st.sessions).len() }))
}

async fn api_description() -> Json<serde_json::Value> {
    let endpoints: Vec<_> = ENDPOINTS.iter().map(|(m, p, s)| json!({ "method": m, "path": p, "summary": s })).collect();
    Json(json!({
        "title": "cascom service",
        "version": env!("CARGO_PKG_VERSION"),
        "endpoints": endpoints,
        "errors": {
            "body": { "error": { "code": "machine-readable code", "message": "text", "id": "offending identifier or null" }, "gapReport": "only on 422" },
            "400": "validation, illegal choice, phase violation",
            "404": "unknown session, pipeline or route",
            "409": "duplicate description id",
            "422": "task has no solution; body carries gapReport"
        },
        "schemas": { "errorRecord": error_record_schema() }
    }))
}

async fn get_kb(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let kb = st.kb();
    Json(json!({ "version": kb.version(), "kb": kb.document() }))
}

async fn post_kb(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let record: Description = parse_required(&body)?;
    let id = match &record {
        Description::Sensor(s) => s.id.clone(),
        Description::Component(c) => c.id.clone(),
    };
    let kb = st.add_description(record)?;
    Ok((StatusCode::CREATED, Json(json!({ "version": kb.version(), "id": id })) ).into_response())
}

async fn create_session(State(st): State<Arc<AppState>>) -> ApiResult<Response> {
    let id = st.next_id("s-");
    let session = Session::new(id.clone(), &st.kb())?;
    let view = session.view();
    lock(&st.sessions).insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = st.session(&id)?;
    let view = lock(&s).view();
    Ok(Json(view).into_response())
}

#[derive(Deserialize)]
struct QuestionsQuery {
    k: Option<usize>,
}

async fn questions(State(st): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<QuestionsQuery>) -> ApiResult<Response> {
    let s = st.session(&id)?;
    let s = lock(&s);
    let questions = s.questions(&st.kb(), q.k.unwrap_or(3));
    Ok(Json(json!({ "questions": questions, "remainingTasks": s.view().dialog.remaining_tasks })).into_response())
}

#[derive(Deserialize)]
struct AnswerItem {
    question: String,
    value: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnswerBody {
    Many { answers: Vec<AnswerItem> },
    One(AnswerItem),
}

async fn answers(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let items = match parse_required::<AnswerBody>(&body)? {
        AnswerBody::Many { answers } => answers,
        AnswerBody::One(a) => vec![a],
    };
    let s = st.session(&id)?;
    let mut s = lock(&s);
    let kb = st.kb();
    // all or nothing: apply to a copy first
    let mut trial = s.clone();
    for a in &items {
        trial.answer(&kb, &a.question, &a.value)?;
    }
    *s = trial;
    let view = s.view();
    Ok(Json(json!({ "dialog": view.dialog, "tasks": s.tasks(&kb) })).into_response())
}

async fn tasks(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = st.session(&id)?;
    let tasks = lock(&s).tasks(&st.kb());
    Ok(Json(json!({ "tasks": tasks })).into_response())
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct TaskBody {
    task_id: String,
}

async fn select_task(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: TaskBody = parse_required(&body)?;
    let s = st.session(&id)?;
    let mut s = lock(&s);
    s.select_task(&st.kb(), &req.task_id)?;
    Ok(Json(s.view()).into_response())
}

#[derive(Default, Deserialize)]
#[serde(rename_all = "camelCase", default)]
struct SolveBody {
    max_depth: Option<usize>,
    allow_conversions: Option<bool>,
    max_solutions: Option<usize>,
}

async fn solve(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: SolveBody = parse(&body)?;
    let base = st.config.solve;
    let opts = SolveOptions {
        max_depth: req.max_depth.unwrap_or(base.max_depth),
        allow_conversions: req.allow_conversions.unwrap_or(base.allow_conversions),
        max_solutions: req.max_solutions.unwrap_or(base.max_solutions),
    };
    let s = st.session(&id)?;
    let view = lock(&s).solve(st.kb(), opts)?;
    Ok(Json(view).into_response())
}

async fn solutions(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = st.session(&id)?;
    let view = lock(&s).solutions()?;
    Ok(Json(view).into_response())
}

async fn priorities(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: PriorityVector = parse_required(&body)?;
    let s = st.session(&id)?;
    let mut s = lock(&s);
    let ranked = s.set_priorities(req)?;
    Ok(match ranked {
        Some(view) => Json(view).into_response(),
        None => Json(s.view()).into_response(),
    })
}

async fn advice(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = st.session(&id)?;
    let s = lock(&s);
    Ok(Json(s.advice()?).into_response())
}

#[derive(Deserialize)]
struct OffersQuery {
    solution: Option<String>,
}

async fn context_offers(State(st): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<OffersQuery>) -> ApiResult<Response> {
    let s = st.session(&id)?;
    let (solution, offers) = lock(&s).context_offers(q.solution.as_deref())?;
    Ok(Json(json!({ "solution": solution, "offers": offers })).into_response())
}

#[derive(Default, Deserialize)]
#[serde(default)]
struct ContextBody {
    solution: Option<String>,
    accept: Vec<ContextSelector>,
}

async fn context(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: ContextBody = parse(&body)?;
    let s = st.session(&id)?;
    let mut s = lock(&s);
    let chosen = s.accept_context(req.solution.as_deref(), &req.accept)?.clone();
    Ok(Json(chosen).into_response())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct DeployResponse<'a> {
    #[serde(flatten)]
    deployment: &'a Deployment,
    stream_url: String,
}

async fn deploy(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: DeployRequest = parse(&body)?;
    let s = st.session(&id)?;
    let n = st.counter.fetch_add(1, Ordering::Relaxed);
    let dep = lock(&s).deploy(&req, |def| format!("{}-{n}", def.id))?;
    let stream_url = format!("/pipelines/{}/stream", dep.pipeline_id);
    let body = serde_json::to_value(DeployResponse { deployment: &dep, stream_url }).expect("deployment serializes");
    lock(&st.pipelines).insert(dep.pipeline_id.clone(), Arc::new(dep));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_pipeline(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let dep = st.pipeline(&id)?;
    Ok(Json(&*dep).into_response())
}

async fn pipeline_xml(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let dep = st.pipeline(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/xml")], to_xml(&dep.definition)).into_response())
}

async fn pipeline_schema(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let dep = st.pipeline(&id)?;
    Ok(Json(record_schema(&dep.definition)).into_response())
}

#[derive(Deserialize)]
struct StreamQuery {
    records: Option<usize>,
    realtime: Option<bool>,
}

async fn stream(State(st): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<StreamQuery>) -> ApiResult<Response> {
    let dep = st.pipeline(&id)?;
    let records = q.records.unwrap_or(dep.records);
    let realtime = q.realtime.unwrap_or(dep.realtime);
    let limit = if records == 0 { RunLimit::DurationMs(u64::MAX) } else { RunLimit::Records(records) };
    let executor = Executor::new(&dep.definition, limit)?;

    let (tx, rx) = tokio::sync::mpsc::channel::<Result<Bytes, Infallible>>(64);
    tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        let mut first = None;
        for item in executor {
            if realtime {
                let ts = item.timestamp_ms();
                let due = Duration::from_millis(ts - *first.get_or_insert(ts));
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
            let mut line = item.to_json_line();
            line.push('\n');
            if tx.blocking_send(Ok(Bytes::from(line))).is_err() {
                break;
            }
        }
    });
    let body = futures::stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|chunk| (chunk, rx)) });
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(body)).into_response())
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
