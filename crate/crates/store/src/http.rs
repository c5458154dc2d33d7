//! JSON HTTP API over a [`Store`].
//!
//! The acting user comes from the request body or the `X-Relkit-Actor`
//! header and is trusted as given; there is no authentication.

use std::collections::BTreeSet;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use relkit_core::lifecycle::{allowed_transitions, CaseState, Configuration, LifecycleError, Role, TransitionRequest};
use relkit_core::orchestrator::{RunReport, Totals};
use relkit_core::session::{
    blind_spots, meeting_digest, progress, AssignStrategy, Phase, SessionError, TestPlan,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::log::StoreError;
use crate::snapshot::DomainError;
use crate::store::{NewSession, Store};

pub const ACTOR_HEADER: &str = "x-relkit-actor";
pub const ROLE_HEADER: &str = "x-relkit-role";

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, kind: "BadRequest", message: message.into() }
    }

    fn not_found(kind: &'static str, message: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, kind, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.kind, "message": self.message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

fn domain_status(e: &DomainError) -> (StatusCode, &'static str) {
    use StatusCode as S;
    match e {
        DomainError::UnknownSession(_) => (S::NOT_FOUND, "UnknownSession"),
        DomainError::DuplicateSession(_) => (S::CONFLICT, "DuplicateSession"),
        DomainError::DuplicateRun(_) => (S::CONFLICT, "DuplicateRun"),
        DomainError::InvalidId(_) => (S::UNPROCESSABLE_ENTITY, "InvalidId"),
        DomainError::InvalidReport(_) => (S::UNPROCESSABLE_ENTITY, "InvalidReport"),
        DomainError::Session(s) => match s {
            SessionError::Lifecycle(LifecycleError::StaleState { .. }) => (S::CONFLICT, "StaleState"),
            SessionError::Lifecycle(LifecycleError::IllegalTransition { .. }) => {
                (S::UNPROCESSABLE_ENTITY, "IllegalTransition")
            }
            SessionError::Lifecycle(LifecycleError::MissingIssueRef(_)) => (S::UNPROCESSABLE_ENTITY, "MissingIssueRef"),
            SessionError::UnknownResult(_) => (S::NOT_FOUND, "UnknownResult"),
            SessionError::SessionClosed => (S::CONFLICT, "SessionClosed"),
            SessionError::SessionIncomplete { .. } => (S::CONFLICT, "SessionIncomplete"),
            SessionError::EntryAlreadyFinal(_) => (S::CONFLICT, "EntryAlreadyFinal"),
            SessionError::PhaseConstraintViolation(_) => (S::UNPROCESSABLE_ENTITY, "PhaseConstraintViolation"),
            SessionError::EmptyPlan => (S::UNPROCESSABLE_ENTITY, "EmptyPlan"),
            SessionError::NoTesters => (S::UNPROCESSABLE_ENTITY, "NoTesters"),
            SessionError::DuplicateEntry { .. } => (S::UNPROCESSABLE_ENTITY, "DuplicateEntry"),
            SessionError::UnknownCase(_) => (S::UNPROCESSABLE_ENTITY, "UnknownCase"),
            SessionError::UnknownTester(_) => (S::UNPROCESSABLE_ENTITY, "UnknownTester"),
            SessionError::InvalidThreshold(_) => (S::BAD_REQUEST, "InvalidThreshold"),
        },
    }
}

impl From<DomainError> for ApiError {
    fn from(e: DomainError) -> Self {
        let (status, kind) = domain_status(&e);
        Self { status, kind, message: e.to_string() }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::ValidationRejected(d) => d.into(),
            StoreError::StorageFailure(_) | StoreError::CorruptLog { .. } => {
                Self { status: StatusCode::INTERNAL_SERVER_ERROR, kind: "StorageFailure", message: e.to_string() }
            }
            StoreError::Locked(_) => {
                Self { status: StatusCode::SERVICE_UNAVAILABLE, kind: "Locked", message: e.to_string() }
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = Arc<Store>;

/// Runs a mutation off the async executor; appends fsync.
async fn blocking<T: Send + 'static>(
    store: &Shared,
    f: impl FnOnce(&Store) -> Result<T, StoreError> + Send + 'static,
) -> ApiResult<T> {
    let store = store.clone();
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, kind: "Internal", message: e.to_string() })?
        .map_err(ApiError::from)
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/progress", get(session_progress))
        .route("/sessions/{id}/digest", get(session_digest))
        .route("/sessions/{id}/blindspots", get(session_blindspots))
        .route("/sessions/{id}/assign", post(assign_session))
        .route("/sessions/{id}/close", post(close_session))
        .route("/results/{id}", get(get_result))
        .route("/results/{id}/transition", post(transition))
        .route("/results/{id}/transitions", get(result_transitions))
        .route("/results/{id}/assign", post(reassign))
        .route("/runs", get(list_runs).post(submit_run))
        .route("/runs/{id}", get(get_run))
        .with_state(store)
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Server(std::io::Error),
}

pub async fn bind(addr: &str) -> Result<tokio::net::TcpListener, ServeError> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::BindFailure { addr: addr.to_owned(), source })
}

/// Serves `store` on `listener` until `shutdown` completes.
pub async fn serve(
    store: Arc<Store>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    axum::serve(listener, router(store)).with_graceful_shutdown(shutdown).await.map_err(ServeError::Server)
}

pub fn local_addr(listener: &tokio::net::TcpListener) -> Option<SocketAddr> {
    listener.local_addr().ok()
}

async fn healthz(State(store): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "last_seq": store.read(|s| s.last_seq) }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub phase: Phase,
    pub plan: String,
    pub total: usize,
    pub final_count: usize,
    pub percent_final: f64,
    pub complete: bool,
    pub opened_at: DateTime<Utc>,
    pub closed_at: Option<DateTime<Utc>>,
}

async fn list_sessions(State(store): State<Shared>) -> Json<Vec<SessionSummary>> {
    Json(store.read(|snap| {
        snap.sessions
            .values()
            .map(|s| {
                let p = progress(s);
                SessionSummary {
                    id: s.id.clone(),
                    phase: s.phase,
                    plan: s.plan.name.clone(),
                    total: p.total,
                    final_count: p.final_count,
                    percent_final: p.percent_final,
                    complete: p.complete,
                    opened_at: s.opened_at,
                    closed_at: s.closed_at,
                }
            })
            .collect()
    }))
}

/// `plan.entries` may be left empty and given as `configurations` instead,
/// which crosses every case with every configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSessionBody {
    #[serde(default)]
    pub id: Option<String>,
    pub phase: Phase,
    pub plan: TestPlanBody,
    pub testers: BTreeSet<String>,
    #[serde(default)]
    pub configurations: Vec<Configuration>,
    #[serde(default)]
    pub planned_days: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestPlanBody {
    pub name: String,
    pub cases: Vec<relkit_core::lifecycle::TestCase>,
    #[serde(default)]
    pub entries: Vec<relkit_core::session::PlanEntry>,
}

impl CreateSessionBody {
    pub fn into_new_session(self) -> NewSession {
        let mut plan = TestPlan { name: self.plan.name, cases: self.plan.cases, entries: self.plan.entries };
        if !self.configurations.is_empty() {
            let crossed = TestPlan::matrix(&plan.name, plan.cases.clone(), &self.configurations);
            plan.entries.extend(crossed.entries);
        }
        NewSession { id: self.id, phase: self.phase, plan, testers: self.testers, planned_days: self.planned_days }
    }
}

async fn create_session(
    State(store): State<Shared>,
    body: Result<Json<CreateSessionBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(body) = body?;
    let session = blocking(&store, move |s| s.create_session(body.into_new_session())).await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(store.read(|s| s.session(&id).cloned())?))
}

#[derive(Debug, Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

fn wants_text(q: &FormatQuery) -> ApiResult<bool> {
    match q.format.as_deref() {
        None | Some("json") => Ok(false),
        Some("text") => Ok(true),
        Some(other) => Err(ApiError::bad_request(format!("unknown format `{other}`"))),
    }
}

async fn session_progress(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<FormatQuery>,
) -> ApiResult<Response> {
    let report = store.read(|s| s.session(&id).map(progress))?;
    Ok(if wants_text(&q)? { report.to_text().into_response() } else { Json(report).into_response() })
}

async fn session_digest(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<FormatQuery>,
) -> ApiResult<Response> {
    let digest = store.read(|s| s.session(&id).map(meeting_digest))?;
    Ok(if wants_text(&q)? { digest.to_text().into_response() } else { Json(digest).into_response() })
}

#[derive(Debug, Deserialize)]
struct ThresholdQuery {
    threshold: Option<String>,
}

pub const DEFAULT_BLIND_SPOT_THRESHOLD: f64 = 0.5;

async fn session_blindspots(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<ThresholdQuery>,
) -> ApiResult<impl IntoResponse> {
    let threshold = match q.threshold {
        None => DEFAULT_BLIND_SPOT_THRESHOLD,
        Some(t) => t.parse::<f64>().map_err(|_| ApiError::bad_request(format!("threshold `{t}` is not a number")))?,
    };
    let spots = store.read(|s| -> Result<_, DomainError> { Ok(blind_spots(s.session(&id)?, threshold)?) })?;
    Ok(Json(json!({ "threshold": threshold, "blind_spots": spots })))
}

async fn assign_session(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let assignments = blocking(&store, move |s| s.assign(&id, AssignStrategy::RoundRobin)).await?;
    Ok(Json(assignments))
}

async fn close_session(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&store, move |s| s.close_session(&id)).await?))
}

async fn get_result(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(store.read(|s| s.result(&id).cloned())?))
}

/// States and roles are accepted in any spelling [`CaseState`] and [`Role`]
/// parse. `expected_from` is the state the client last saw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionBody {
    #[serde(alias = "from")]
    pub expected_from: String,
    pub to: String,
    #[serde(default)]
    pub role: Option<String>,
    #[serde(default)]
    pub actor: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub issue_ref: Option<String>,
}

fn header(headers: &HeaderMap, name: &str) -> Option<String> {
    headers.get(name).and_then(|v| v.to_str().ok()).map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned)
}

fn parse_state(s: &str) -> ApiResult<CaseState> {
    s.parse().map_err(ApiError::bad_request)
}

fn parse_role(s: &str) -> ApiResult<Role> {
    s.parse().map_err(ApiError::bad_request)
}

async fn transition(
    State(store): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<TransitionBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(body) = body?;
    let actor = body
        .actor
        .filter(|a| !a.trim().is_empty())
        .or_else(|| header(&headers, ACTOR_HEADER))
        .ok_or_else(|| ApiError::bad_request("an actor is required (body `actor` or X-Relkit-Actor header)"))?;
    let role = body
        .role
        .or_else(|| header(&headers, ROLE_HEADER))
        .ok_or_else(|| ApiError::bad_request("a role is required (body `role` or X-Relkit-Role header)"))?;
    let req = TransitionRequest {
        expected_from: parse_state(&body.expected_from)?,
        to: parse_state(&body.to)?,
        role: parse_role(&role)?,
        actor,
        note: body.note,
        issue_ref: body.issue_ref,
    };
    Ok(Json(blocking(&store, move |s| s.transition(&id, &req)).await?))
}

#[derive(Debug, Deserialize)]
struct RoleQuery {
    role: Option<String>,
}

async fn result_transitions(
    State(store): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<RoleQuery>,
) -> ApiResult<impl IntoResponse> {
    let role = q
        .role
        .or_else(|| header(&headers, ROLE_HEADER))
        .ok_or_else(|| ApiError::bad_request("a role is required (`role` query or X-Relkit-Role header)"))?;
    let role = parse_role(&role)?;
    let (state, closed) = store.read(|s| -> Result<_, DomainError> {
        Ok((s.result(&id)?.state, s.session_of_result(&id)?.is_closed()))
    })?;
    let allowed: Vec<CaseState> =
        if closed { Vec::new() } else { allowed_transitions(state, role).into_iter().collect() };
    Ok(Json(json!({ "result_id": id, "state": state, "role": role, "allowed": allowed })))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignBody {
    pub tester: String,
}

async fn reassign(
    State(store): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<AssignBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(body) = body?;
    Ok(Json(blocking(&store, move |s| s.reassign(&id, &body.tester)).await?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub submitted_at: DateTime<Utc>,
    pub totals: Totals,
    pub succeeded: bool,
}

async fn list_runs(State(store): State<Shared>) -> Json<Vec<RunSummary>> {
    Json(store.read(|s| {
        s.runs
            .iter()
            .map(|r| RunSummary {
                id: r.id.clone(),
                submitted_at: r.submitted_at,
                totals: r.report.totals,
                succeeded: r.report.succeeded(),
            })
            .collect()
    }))
}

async fn submit_run(
    State(store): State<Shared>,
    body: Result<Json<RunReport>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(report) = body?;
    let stored = blocking(&store, move |s| s.submit_run(report)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": stored.id, "submitted_at": stored.submitted_at }))))
}

async fn get_run(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    store
        .read(|s| s.run(&id).cloned())
        .map(Json)
        .ok_or_else(|| ApiError::not_found("UnknownRun", format!("unknown run `{id}`")))
}
