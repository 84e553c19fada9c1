//! HTTP API over the session store.
//!
//! | method | path                      |                                  |
//! |--------|---------------------------|----------------------------------|
//! | POST   | `/sessions`               | create (honours `Idempotency-Key`) |
//! | GET    | `/sessions/{id}`          | status and progress              |
//! | GET    | `/sessions/{id}/query`    | next pending pair                |
//! | POST   | `/sessions/{id}/label`    | answer the pending pair          |
//! | GET    | `/sessions/{id}/tree`     | `?which=human\|agent`            |
//! | POST   | `/sessions/{id}/train`    | start the training job           |
//! | GET    | `/sessions/{id}/report`   | 202 until the report is ready    |
//! | POST   | `/sessions/{id}/abandon`  | terminal stop                    |

use std::collections::HashMap;
use std::sync::Arc;

use acv_core::agent::{TrainingConfig, TrainingTrace};
use acv_core::verify::{run_scenario, ExperimentReport};
use acv_core::{Choice, GroundedTree};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::session::{JobState, Progress, QueryPair, SessionError, SessionStatus, TrainingJob};
use crate::store::{SessionHandle, Store, StoreError};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug, Clone)]
pub struct AppState {
    pub store: Arc<Store>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/query", get(get_query))
        .route("/sessions/{id}/label", post(submit_label))
        .route("/sessions/{id}/tree", get(get_tree))
        .route("/sessions/{id}/train", post(train))
        .route("/sessions/{id}/report", get(get_report))
        .route("/sessions/{id}/abandon", post(abandon))
        .with_state(state)
}

/// Restarts training jobs that were running when the store was last written.
pub async fn resume_jobs(state: &AppState) {
    for handle in state.store.interrupted_jobs().await {
        let id = handle.lock().await.id.clone();
        tracing::info!(session = %id, "resuming interrupted training job");
        spawn_job(state.store.clone(), handle);
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    trace: Option<TrainingTrace>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), trace: None }
    }

    fn not_found(what: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("unknown {what}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(trace) = self.trace {
            body["trace"] = serde_json::to_value(trace).expect("traces serialize");
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::InvalidConfig(_) => StatusCode::BAD_REQUEST,
            SessionError::Stale { .. }
            | SessionError::Collecting
            | SessionError::NotTrained
            | SessionError::Abandoned => StatusCode::CONFLICT,
            SessionError::Tournament(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Session(s) => s.into(),
            StoreError::KeyConflict(_) => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            other => {
                tracing::error!(error = %other, "storage failure");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string())
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid body: {e}")))
}

fn session(state: &AppState, id: &str) -> ApiResult<SessionHandle> {
    state.store.get(id).ok_or_else(|| ApiError::not_found("session"))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Created {
    pub session_id: String,
    pub first_query: Option<QueryPair>,
    pub progress: Progress,
}

async fn create_session(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let request = parse(&body)?;
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "Idempotency-Key must be ASCII"))?
                .to_string(),
        ),
        None => None,
    };
    let (handle, fresh) = state.store.create(request, key).await?;
    let s = handle.lock().await;
    let q = s.query();
    let status = if fresh { StatusCode::CREATED } else { StatusCode::OK };
    tracing::info!(session = %s.id, fresh, "session created");
    Ok((status, Json(Created { session_id: s.id.clone(), first_query: q.pair, progress: q.progress })).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = session(&state, &id)?;
    let s = handle.lock().await;
    Ok(Json(json!({
        "id": s.id,
        "status": s.status,
        "createdAt": s.created_at,
        "updatedAt": s.updated_at,
        "k": s.candidates.len(),
        "world": s.world,
        "progress": s.query().progress,
        "job": s.job,
    }))
    .into_response())
}

async fn get_query(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = session(&state, &id)?;
    let q = handle.lock().await.query();
    Ok(Json(q).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct LabelBody {
    left_id: String,
    right_id: String,
    choice: serde_json::Value,
}

async fn submit_label(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let handle = session(&state, &id)?;
    let body: LabelBody = parse(&body)?;
    let choice = body
        .choice
        .as_u64()
        .and_then(|v| u8::try_from(v).ok())
        .and_then(|v| Choice::try_from(v).ok())
        .ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "choice must be 0 or 1"))?;

    let mut guard = handle.lock().await;
    // apply to a copy so a failed write leaves memory and disk in agreement
    let mut next = guard.clone();
    let q = next.submit(&body.left_id, &body.right_id, choice)?;
    state.store.save(&next)?;
    *guard = next;
    Ok(Json(json!({ "accepted": true, "nextQuery": q.pair, "progress": q.progress })).into_response())
}

async fn get_tree(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let handle = session(&state, &id)?;
    let tree: GroundedTree = match params.get("which").map(String::as_str) {
        Some("human") => handle.lock().await.human_tree()?,
        Some("agent") => {
            let s = handle.lock().await;
            if !matches!(s.job.as_ref().map(|j| &j.state), Some(JobState::Done)) {
                return Err(SessionError::NotTrained.into());
            }
            let text = state.store.load_report(&s.id)?.ok_or(SessionError::NotTrained)?;
            let report = ExperimentReport::from_json(&text)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            report.final_agent_tree().cloned().ok_or(SessionError::NotTrained)?
        }
        _ => return Err(ApiError::not_found("tree")),
    };
    Ok(Json(tree).into_response())
}

fn report_url(id: &str) -> String {
    format!("/sessions/{id}/report")
}

async fn train(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let handle = session(&state, &id)?;
    let config: TrainingConfig =
        if body.iter().all(u8::is_ascii_whitespace) { TrainingConfig::default() } else { parse(&body)? };
    config.validate().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;

    let mut guard = handle.lock().await;
    match guard.status {
        SessionStatus::Collecting => return Err(SessionError::Collecting.into()),
        SessionStatus::Abandoned => return Err(SessionError::Abandoned.into()),
        _ => {}
    }
    let accepted = Json(json!({ "reportUrl": report_url(&id) }));
    if guard.job.is_some() {
        return Ok((StatusCode::ACCEPTED, accepted).into_response());
    }
    let mut next = guard.clone();
    next.job = Some(TrainingJob { config, state: JobState::Running });
    next.touch();
    state.store.save(&next)?;
    *guard = next;
    drop(guard);
    spawn_job(state.store.clone(), handle);
    Ok((StatusCode::ACCEPTED, accepted).into_response())
}

fn spawn_job(store: Arc<Store>, handle: SessionHandle) {
    tokio::spawn(async move {
        let (id, scenario, world, k, grounding, config, seed) = {
            let s = handle.lock().await;
            let Some(job) = &s.job else { return };
            let scenario = match s.scenario() {
                Ok(sc) => sc,
                Err(e) => {
                    tracing::error!(session = %s.id, error = %e, "cannot train");
                    return;
                }
            };
            (
                s.id.clone(),
                scenario,
                s.world(),
                s.candidates.len(),
                s.request.grounding_params,
                job.config.clone(),
                s.request.seed,
            )
        };
        tracing::info!(session = %id, "training started");
        let result =
            tokio::task::spawn_blocking(move || run_scenario(&scenario, &world, k, grounding, &config, seed)).await;

        let mut s = handle.lock().await;
        let outcome = match result {
            Ok(Ok(report)) => match store.save_report(&id, &report.to_json()) {
                Ok(()) => {
                    s.advance(SessionStatus::Trained);
                    s.advance(SessionStatus::Reported);
                    JobState::Done
                }
                Err(e) => JobState::Failed { error: e.to_string(), trace: None },
            },
            Ok(Err(e)) => JobState::Failed { error: e.to_string(), trace: e.divergence_trace().cloned() },
            Err(e) => JobState::Failed { error: format!("training task failed: {e}"), trace: None },
        };
        tracing::info!(session = %id, outcome = ?outcome, "training finished");
        if let Some(job) = s.job.as_mut() {
            job.state = outcome;
        }
        s.touch();
        if let Err(e) = store.save(&s) {
            tracing::error!(session = %id, error = %e, "cannot persist job outcome");
        }
    });
}

async fn get_report(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = session(&state, &id)?;
    let s = handle.lock().await;
    if s.status == SessionStatus::Collecting {
        return Err(SessionError::Collecting.into());
    }
    let Some(job) = &s.job else {
        return Err(ApiError::new(StatusCode::CONFLICT, "training has not been started"));
    };
    match &job.state {
        JobState::Running => Ok((StatusCode::ACCEPTED, Json(json!({ "status": "pending" }))).into_response()),
        JobState::Failed { error, trace } => {
            Err(ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: error.clone(), trace: trace.clone() })
        }
        JobState::Done => {
            let text = state
                .store
                .load_report(&id)?
                .ok_or_else(|| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "report file is missing"))?;
            Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
        }
    }
}

async fn abandon(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = session(&state, &id)?;
    let mut guard = handle.lock().await;
    let mut next = guard.clone();
    next.abandon();
    state.store.save(&next)?;
    *guard = next;
    Ok(Json(json!({ "status": guard.status })).into_response())
}
