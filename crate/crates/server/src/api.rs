//! Routes under `/api/v1`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::service::{CampaignService, RefineJob, RefineOutcome, ServiceError};

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    }
}

/// Clock that only moves when told to; for tests.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Clone)]
pub struct AppState {
    service: Arc<Mutex<CampaignService>>,
    clock: Arc<dyn Clock>,
    /// Parallel refinement calls during advance-round.
    refine_workers: usize,
}

impl AppState {
    pub fn new(service: CampaignService, clock: Arc<dyn Clock>) -> Self {
        Self {
            service: Arc::new(Mutex::new(service)),
            clock,
            refine_workers: 4,
        }
    }

    pub fn with_refine_workers(mut self, n: usize) -> Self {
        self.refine_workers = n.max(1);
        self
    }

    /// Runs `f` on the service off the async executor.
    pub async fn with<T: Send + 'static>(
        &self,
        f: impl FnOnce(&mut CampaignService, u64) -> Result<T, ServiceError> + Send + 'static,
    ) -> Result<T, ServiceError> {
        let (svc, clock) = (self.service.clone(), self.clock.clone());
        tokio::task::spawn_blocking(move || {
            let mut guard = svc.lock().unwrap_or_else(|e| e.into_inner());
            f(&mut guard, clock.now_ms())
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
    }
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/tasks/next", get(next_task))
        .route("/api/v1/tasks/{id}/answer", post(answer))
        .route("/api/v1/campaign/advance-round", post(advance_round))
        .route("/api/v1/campaign/state", get(campaign_state))
        .route("/api/v1/masks/{instance}", get(mask))
        .route("/api/v1/instances/{instance}/crop.png", get(crop))
        .route("/api/v1/reports/{name}", get(report))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Starts a server on its own thread and runtime; returns the bound address.
/// The server lives until the process exits.
pub fn spawn(state: AppState, addr: &str) -> std::io::Result<std::net::SocketAddr> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    std::thread::spawn(move || {
        rt.block_on(async move {
            let l = tokio::net::TcpListener::from_std(listener)?;
            serve(l, state).await
        })
    });
    Ok(local)
}

async fn next_task(
    State(st): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult {
    let annotator = q
        .get("annotator")
        .cloned()
        .or_else(|| {
            headers
                .get("x-annotator-id")
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        })
        .ok_or_else(|| ServiceError::BadRequest("annotator is required".into()))?;
    let campaign = q.get("campaign").cloned();
    let lease = st
        .with(move |s, now| {
            if campaign.is_some_and(|c| c != s.name()) {
                return Err(ServiceError::NotFound("unknown campaign".into()));
            }
            s.next_task(&annotator, now)
        })
        .await?;
    Ok(match lease {
        Some(l) => Json(l).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn answer(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let r = st.with(move |s, now| s.submit_answer(&id, &body, now)).await?;
    Ok(Json(r).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceResponse {
    pub refined: usize,
    pub parked: usize,
    pub refined_ids: Vec<String>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub instance_id: String,
    pub reason: String,
}

/// Snapshots the waiting instances, refines them without the lock, then
/// commits whatever is still waiting.
async fn advance_round(State(st): State<AppState>) -> ApiResult {
    let jobs = st.with(|s, _| Ok(s.jobs())).await?;
    let workers = st.refine_workers;
    let outcomes = tokio::task::spawn_blocking(move || run_jobs(jobs, workers))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    let summary = st.with(move |s, now| s.commit_outcomes(outcomes, now)).await?;
    Ok(Json(AdvanceResponse {
        refined: summary.refined.len(),
        parked: summary.parked.len(),
        refined_ids: summary.refined,
        failures: summary
            .parked
            .into_iter()
            .map(|(instance_id, reason)| Failure { instance_id, reason })
            .collect(),
    })
    .into_response())
}

fn run_jobs(jobs: Vec<RefineJob>, workers: usize) -> Vec<RefineOutcome> {
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(RefineJob::run).collect();
    }
    let next = AtomicU64::new(0);
    let mut out: Vec<(usize, RefineOutcome)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers.min(jobs.len()))
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst) as usize;
                        let Some(job) = jobs.get(i) else { break };
                        done.push((i, job.run()));
                    }
                    done
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("refine worker"))
            .collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, o)| o).collect()
}

async fn campaign_state(State(st): State<AppState>) -> ApiResult {
    let snap = st.with(|s, _| Ok(s.snapshot())).await?;
    Ok(Json(snap).into_response())
}

async fn mask(
    State(st): State<AppState>,
    Path(instance): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let round = match q.get("round") {
        None => None,
        Some(r) => Some(
            r.parse::<u32>()
                .map_err(|_| ServiceError::BadRequest(format!("round {r:?} is not a round number")))?,
        ),
    };
    let m = st.with(move |s, _| s.mask(&instance, round)).await?;
    Ok(Json(m).into_response())
}

async fn crop(State(st): State<AppState>, Path(instance): Path<String>) -> ApiResult {
    let png = st.with(move |s, _| s.crop_png(&instance)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn report(State(st): State<AppState>, Path(name): Path<String>) -> ApiResult {
    let (body, ctype) = st
        .with(move |s, _| {
            let r = s.report()?;
            let internal = |e: clickseg::analytics::AnalyticsError| ServiceError::Internal(e.to_string());
            let mut buf = Vec::new();
            match name.as_str() {
                "campaign.json" => return Ok((r.to_json().map_err(internal)?.into_bytes(), "application/json")),
                "rounds.csv" => r.write_rounds_csv(&mut buf).map_err(internal)?,
                "quality.csv" => r.write_quality_csv(&mut buf).map_err(internal)?,
                "time.csv" => r.write_time_csv(&mut buf).map_err(internal)?,
                _ => return Err(ServiceError::NotFound(format!("no report named {name}"))),
            }
            Ok((buf, "text/csv"))
        })
        .await?;
    Ok(([(header::CONTENT_TYPE, ctype)], body).into_response())
}
