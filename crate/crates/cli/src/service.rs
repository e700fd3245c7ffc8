//! The `/v1` HTTP API over a [`Store`].

use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dosebo::trial::{ObservationBatch, PosteriorGrid, Recommendation, TrialConfig, TrialStatus};
use serde::{Deserialize, Serialize};

use crate::store::{Entry, Store, StoreError, TrialEvent};

const DEFAULT_SAMPLES: usize = 1000;
const MAX_SAMPLES: usize = 100_000;
const DEFAULT_PAGE: usize = 100;
const MAX_PAGE: usize = 1000;

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, &'static str, String);

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::NotFound(_) => ApiError(StatusCode::NOT_FOUND, "not_found", msg),
            StoreError::ReadOnly(_) => ApiError(StatusCode::CONFLICT, "read_only", msg),
            StoreError::Io(_) => ApiError(StatusCode::INTERNAL_SERVER_ERROR, "storage", msg),
            StoreError::Engine(e) => match e {
                dosebo::Error::State(_) => ApiError(StatusCode::CONFLICT, "conflict", msg),
                dosebo::Error::ContractViolation(_) => {
                    ApiError(StatusCode::UNPROCESSABLE_ENTITY, "contract_violation", msg)
                }
                dosebo::Error::InvalidArgument(_) => ApiError(StatusCode::UNPROCESSABLE_ENTITY, "invalid_argument", msg),
                dosebo::Error::Config(_) => ApiError(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", msg),
                dosebo::Error::Numeric(_) => ApiError(StatusCode::INTERNAL_SERVER_ERROR, "numeric", msg),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.1.to_string(),
            message: self.2,
        };
        (self.0, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Trial summary returned by the status, create and observe endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub trial_id: String,
    /// Set when the log could not be replayed; the trial then accepts no
    /// writes and `status` may be absent.
    pub read_only: Option<String>,
    pub pending: Vec<Option<Vec<f64>>>,
    pub status: Option<TrialStatus>,
    pub last_sequence: u64,
}

/// Response to an accepted cohort: the new state and the events it caused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationReply {
    pub trial: TrialView,
    pub events: Vec<TrialEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPage {
    pub events: Vec<TrialEvent>,
    /// Pass as `since` to fetch the following page.
    pub next: u64,
}

#[derive(Debug, Deserialize)]
pub struct SampleQuery {
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IssueRequest {
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
pub struct StratumQuery {
    pub stratum: usize,
}

#[derive(Debug, Deserialize)]
pub struct PageQuery {
    pub since: Option<u64>,
    pub limit: Option<usize>,
}

pub fn view(entry: &Entry) -> TrialView {
    TrialView {
        trial_id: entry.id.clone(),
        read_only: entry.read_only.clone(),
        pending: entry.trial.as_ref().map(|t| t.pending()).unwrap_or_default(),
        status: entry.trial.as_ref().map(|t| t.status()),
        last_sequence: entry.log.len() as u64,
    }
}

/// Runs `f` under the trial's lock on the blocking pool; model fits can
/// take a while and must not stall the runtime.
async fn with_entry<T: Send + 'static>(
    store: Arc<Store>,
    id: String,
    f: impl FnOnce(&mut Entry) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(move || {
        let entry = store.get(&id)?;
        let mut guard = entry.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn lock(entry: &Mutex<Entry>) -> std::sync::MutexGuard<'_, Entry> {
    entry.lock().unwrap_or_else(|p| p.into_inner())
}

async fn create(State(store): State<Arc<Store>>, Json(config): Json<TrialConfig>) -> Result<(StatusCode, Json<TrialView>), ApiError> {
    let v = tokio::task::spawn_blocking(move || -> Result<TrialView, ApiError> {
        let entry = store.create(config)?;
        let guard = lock(&entry);
        Ok(view(&guard))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(v)))
}

async fn list(State(store): State<Arc<Store>>) -> Json<Vec<String>> {
    Json(store.ids())
}

async fn status(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<TrialView> {
    with_entry(store, id, |e| Ok(view(e))).await.map(Json)
}

async fn observe(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Json(batch): Json<ObservationBatch>,
) -> ApiResult<ObservationReply> {
    with_entry(store, id, move |e| {
        let ((), events) = e.apply(|t| t.submit_observations(batch))?;
        Ok(ObservationReply { trial: view(e), events })
    })
    .await
    .map(Json)
}

async fn recommendation(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Query(q): Query<SampleQuery>,
) -> ApiResult<Vec<Recommendation>> {
    let samples = q.samples.unwrap_or(DEFAULT_SAMPLES);
    if samples > MAX_SAMPLES {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_argument",
            format!("samples must be at most {MAX_SAMPLES}"),
        ));
    }
    let seed = q.seed.unwrap_or(0);
    with_entry(store, id, move |e| Ok(e.trial()?.recommendations(samples, seed).map_err(StoreError::from)?))
        .await
        .map(Json)
}

/// Issues the final recommendation and records it in the log.
async fn issue_recommendation(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Json(req): Json<IssueRequest>,
) -> ApiResult<ObservationReply> {
    if req.samples > MAX_SAMPLES {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_argument",
            format!("samples must be at most {MAX_SAMPLES}"),
        ));
    }
    with_entry(store, id, move |e| {
        let (_, events) = e.apply(|t| t.final_recommendation(req.samples, req.seed))?;
        Ok(ObservationReply { trial: view(e), events })
    })
    .await
    .map(Json)
}

async fn posterior(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Query(q): Query<StratumQuery>,
) -> ApiResult<PosteriorGrid> {
    with_entry(store, id, move |e| Ok(e.trial()?.posterior_grid(q.stratum).map_err(StoreError::from)?))
        .await
        .map(Json)
}

async fn events(State(store): State<Arc<Store>>, Path(id): Path<String>, Query(q): Query<PageQuery>) -> ApiResult<EventPage> {
    let since = q.since.unwrap_or(0);
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    with_entry(store, id, move |e| {
        let events = e.events_since(since, limit).to_vec();
        let next = events.last().map_or(since.max(0), |ev| ev.sequence);
        Ok(EventPage { events, next })
    })
    .await
    .map(Json)
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/v1/trials", post(create).get(list))
        .route("/v1/trials/{id}", get(status))
        .route("/v1/trials/{id}/observations", post(observe))
        .route("/v1/trials/{id}/recommendation", get(recommendation).post(issue_recommendation))
        .route("/v1/trials/{id}/posterior", get(posterior))
        .route("/v1/trials/{id}/events", get(events))
        .with_state(store)
}

/// Serves until ctrl-c.
pub async fn serve(store: Arc<Store>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
