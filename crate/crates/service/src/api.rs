//! The coordinator's HTTP face.
//!
//! Read endpoints are public; queue administration requires the admin
//! bearer token and the worker protocol requires the worker bearer token
//! (when configured — leaving a token unset opens that surface, which is
//! only sensible for local development).

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use verifier_core::queue::QueueError;

use crate::coordinator::{BuildRecord, Coordinator, CoordinatorError, StatusFilter};
use crate::wire::{
    bad_reason_str, reproducible_ratio, BuildView, ClaimRequest, ClaimResponse, DashboardView,
    ErrorBody, KeyView, PackageListView, PackageView, ReportRequest, ReportResponse,
    RequeueRequest, RequeueResponse, TaskView,
};

const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 500;

#[derive(Clone)]
pub struct ApiContext {
    pub coordinator: Arc<Coordinator>,
    /// Required for queue administration (requeue) when set.
    pub admin_token: Option<String>,
    /// Required for the worker protocol (claim/report) when set.
    pub worker_token: Option<String>,
}

pub fn router(ctx: ApiContext) -> Router {
    Router::new()
        .route("/api/v0/dashboard", get(dashboard))
        .route("/api/v0/key", get(key))
        .route("/api/v0/pkgs", get(list_pkgs))
        .route("/api/v0/pkgs/{name}", get(show_pkg))
        .route("/api/v0/builds/{id}", get(show_build))
        .route("/api/v0/builds/{id}/log", get(build_log))
        .route("/api/v0/builds/{id}/diff", get(build_diff))
        .route("/api/v0/builds/{id}/attestation", get(build_attestation))
        .route("/api/v0/queue/requeue", post(requeue))
        .route("/api/v0/work/claim", post(claim))
        .route("/api/v0/work/report", post(report))
        .with_state(ctx)
}

/// Serve the API on an already-bound listener until the task is dropped.
pub async fn serve(router: Router, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router).await
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, what)
    }

    fn bad_request(what: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, what)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(ErrorBody {
                error: self.message,
            }),
        )
            .into_response()
    }
}

impl From<CoordinatorError> for ApiError {
    fn from(e: CoordinatorError) -> ApiError {
        match &e {
            CoordinatorError::Queue(QueueError::UnknownToken) => {
                ApiError::new(StatusCode::NOT_FOUND, e.to_string())
            }
            CoordinatorError::Queue(QueueError::ExpiredToken) => {
                ApiError::new(StatusCode::GONE, e.to_string())
            }
            CoordinatorError::Queue(QueueError::NotFound(_)) => {
                ApiError::new(StatusCode::NOT_FOUND, e.to_string())
            }
            CoordinatorError::BadReport(_) => ApiError::bad_request(e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

fn authorize(headers: &HeaderMap, required: &Option<String>) -> Result<(), ApiError> {
    let Some(token) = required else {
        return Ok(());
    };
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok());
    match presented {
        Some(v) if v == format!("Bearer {token}") => Ok(()),
        _ => Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "missing or invalid bearer token",
        )),
    }
}

fn build_view(record: &BuildRecord) -> BuildView {
    let bad_reason = match record.status {
        verifier_core::queue::VerificationStatus::Bad(r) => Some(bad_reason_str(r).to_string()),
        _ => None,
    };
    BuildView {
        build_id: record.build_id,
        name: record.name.clone(),
        version: record.version.to_string(),
        arch: record.arch.clone(),
        status: record.status.label().to_string(),
        bad_reason,
        worker_id: record.worker_id.clone(),
        started: record.started.0,
        finished: record.finished.0,
        rebuilt_digest: record.rebuilt_digest.map(|d| d.to_hex()),
        has_log: !record.log.is_empty(),
        has_diff: record.diff_report.is_some(),
        has_attestation: record.attestation.is_some(),
    }
}

// ---------------------------------------------------------------------------
// Read endpoints

async fn dashboard(State(ctx): State<ApiContext>) -> Json<DashboardView> {
    let counts = ctx.coordinator.counts();
    Json(DashboardView {
        rebuilder_id: ctx.coordinator.rebuilder_id().to_string(),
        total: counts.total(),
        good: counts.good,
        bad: counts.bad,
        unknown: counts.unknown,
        reproducible_ratio: reproducible_ratio(counts.good, counts.bad),
    })
}

async fn key(State(ctx): State<ApiContext>) -> Json<KeyView> {
    Json(KeyView {
        rebuilder_id: ctx.coordinator.rebuilder_id().to_string(),
        public_key: ctx.coordinator.public_key_hex(),
        key_id: ctx.coordinator.key_id(),
    })
}

#[derive(Debug, Deserialize)]
struct PkgsQuery {
    status: Option<String>,
    prefix: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn list_pkgs(
    State(ctx): State<ApiContext>,
    Query(q): Query<PkgsQuery>,
) -> Result<Json<PackageListView>, ApiError> {
    let status = match &q.status {
        None => None,
        Some(s) => Some(
            StatusFilter::parse(s)
                .ok_or_else(|| ApiError::bad_request(format!("unknown status filter {s:?}")))?,
        ),
    };
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let (entries, total_matched) =
        ctx.coordinator
            .packages(status, q.prefix.as_deref(), q.offset.unwrap_or(0), limit);
    Ok(Json(PackageListView {
        packages: entries.iter().map(PackageView::from).collect(),
        total_matched,
    }))
}

async fn show_pkg(
    State(ctx): State<ApiContext>,
    Path(name): Path<String>,
) -> Result<Json<Vec<PackageView>>, ApiError> {
    let entries = ctx.coordinator.package(&name);
    if entries.is_empty() {
        return Err(ApiError::not_found(format!("no package named {name:?}")));
    }
    Ok(Json(entries.iter().map(PackageView::from).collect()))
}

async fn show_build(
    State(ctx): State<ApiContext>,
    Path(id): Path<u64>,
) -> Result<Json<BuildView>, ApiError> {
    let record = ctx
        .coordinator
        .build(id)
        .ok_or_else(|| ApiError::not_found(format!("no build {id}")))?;
    Ok(Json(build_view(&record)))
}

fn text_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], body).into_response()
}

async fn build_log(
    State(ctx): State<ApiContext>,
    Path(id): Path<u64>,
) -> Result<Response, ApiError> {
    let record = ctx
        .coordinator
        .build(id)
        .ok_or_else(|| ApiError::not_found(format!("no build {id}")))?;
    Ok(text_response(record.log))
}

async fn build_diff(
    State(ctx): State<ApiContext>,
    Path(id): Path<u64>,
) -> Result<Response, ApiError> {
    let record = ctx
        .coordinator
        .build(id)
        .ok_or_else(|| ApiError::not_found(format!("no build {id}")))?;
    let diff = record
        .diff_report
        .ok_or_else(|| ApiError::not_found(format!("build {id} has no classification report")))?;
    Ok(text_response(diff))
}

async fn build_attestation(
    State(ctx): State<ApiContext>,
    Path(id): Path<u64>,
) -> Result<Response, ApiError> {
    let record = ctx
        .coordinator
        .build(id)
        .ok_or_else(|| ApiError::not_found(format!("no build {id}")))?;
    let att = record
        .attestation
        .ok_or_else(|| ApiError::not_found(format!("build {id} has no attestation")))?;
    Ok(text_response(att))
}

// ---------------------------------------------------------------------------
// Admin endpoints

async fn requeue(
    State(ctx): State<ApiContext>,
    headers: HeaderMap,
    Json(req): Json<RequeueRequest>,
) -> Result<Json<RequeueResponse>, ApiError> {
    authorize(&headers, &ctx.admin_token)?;
    let requeued = ctx.coordinator.requeue(&req.name)?;
    Ok(Json(RequeueResponse { requeued }))
}

// ---------------------------------------------------------------------------
// Worker endpoints

async fn claim(
    State(ctx): State<ApiContext>,
    headers: HeaderMap,
    Json(req): Json<ClaimRequest>,
) -> Result<Json<ClaimResponse>, ApiError> {
    authorize(&headers, &ctx.worker_token)?;
    if req.worker_id.is_empty() {
        return Err(ApiError::bad_request("worker_id must not be empty"));
    }
    let task = ctx.coordinator.claim(&req.worker_id)?;
    Ok(Json(ClaimResponse {
        task: task.as_ref().map(TaskView::from),
    }))
}

async fn report(
    State(ctx): State<ApiContext>,
    headers: HeaderMap,
    Json(req): Json<ReportRequest>,
) -> Result<Json<ReportResponse>, ApiError> {
    authorize(&headers, &ctx.worker_token)?;
    let build = ctx.coordinator.report(&req)?;
    Ok(Json(ReportResponse {
        build_id: build.build_id,
        status: build.status.label().to_string(),
    }))
}
