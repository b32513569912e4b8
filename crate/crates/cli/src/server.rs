//! JSON-over-HTTP front end of [`ModerationService`].

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use graymod_core::service::{
    ActiveThresholds, CoverageUpdate, ItemStatus, Label, LiveMetrics, ModerationService, QueueItem,
    ServiceError, TokenWeight,
};

pub const DEFAULT_LIMIT: usize = 50;
pub const MAX_LIMIT: usize = 1_000;

type Shared = Arc<ModerationService>;

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(ServiceError::BadRequest(e.body_text()))
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError(ServiceError::BadRequest(e.body_text()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.0.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = json!({ "error": self.0.code(), "message": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
pub struct CommentRequest {
    pub text: String,
    pub ts: Option<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CommentResponse {
    pub id: String,
    pub p: f64,
    pub decision: ItemStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<TokenWeight>>,
    pub model_version: String,
    pub thresholds_version: u64,
}

#[derive(Debug, Deserialize)]
pub struct QueueQuery {
    pub status: Option<String>,
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueuePage {
    pub items: Vec<QueueItem>,
    pub total: usize,
}

#[derive(Debug, Deserialize)]
pub struct LabelRequest {
    pub label: Label,
    pub moderator: String,
}

#[derive(Debug, Deserialize)]
pub struct CoverageRequest {
    pub coverage: f64,
}

#[derive(Debug, Serialize)]
pub struct MetricsResponse {
    #[serde(flatten)]
    pub live: LiveMetrics,
    pub variant: Option<String>,
    pub model_version: Option<String>,
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ServiceError::Internal(graymod_core::Error::Data(format!("worker failed: {e}")))
    })?
}

async fn post_comment(
    State(svc): State<Shared>,
    body: Result<Json<CommentRequest>, JsonRejection>,
) -> ApiResult<CommentResponse> {
    let Json(req) = body?;
    let item = blocking(move || svc.score_and_route(&req.text, req.ts)).await?;
    Ok(Json(CommentResponse {
        id: item.id,
        p: item.p,
        decision: item.decision,
        attention: item.attention,
        model_version: item.model_version,
        thresholds_version: item.thresholds_version,
    }))
}

async fn get_queue(
    State(svc): State<Shared>,
    query: Result<Query<QueueQuery>, QueryRejection>,
) -> ApiResult<QueuePage> {
    let Query(q) = query?;
    let status = match q.status.as_deref() {
        None => Some(ItemStatus::GrayPending),
        Some("all") => None,
        Some(s) => Some(
            ItemStatus::parse(s)
                .ok_or_else(|| ServiceError::BadRequest(format!("unknown status {s:?}")))?,
        ),
    };
    let limit = q.limit.unwrap_or(DEFAULT_LIMIT).min(MAX_LIMIT);
    let (items, total) = svc.list(status, limit, q.offset.unwrap_or(0));
    Ok(Json(QueuePage { items, total }))
}

async fn get_item(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<QueueItem> {
    Ok(Json(svc.get(&id)?))
}

async fn post_decision(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> ApiResult<QueueItem> {
    let Json(req) = body?;
    Ok(Json(svc.moderator_decide(
        &id,
        req.label,
        &req.moderator,
    )?))
}

async fn post_audit(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> ApiResult<QueueItem> {
    let Json(req) = body?;
    Ok(Json(svc.audit(&id, req.label, &req.moderator)?))
}

async fn get_thresholds(State(svc): State<Shared>) -> ApiResult<ActiveThresholds> {
    let active = svc.thresholds().ok_or(ServiceError::NoThresholds)?;
    Ok(Json(active.as_ref().clone()))
}

async fn put_thresholds(
    State(svc): State<Shared>,
    body: Result<Json<CoverageRequest>, JsonRejection>,
) -> ApiResult<CoverageUpdate> {
    let Json(req) = body?;
    Ok(Json(
        blocking(move || svc.set_coverage(req.coverage)).await?,
    ))
}

async fn get_metrics(State(svc): State<Shared>) -> Json<MetricsResponse> {
    let info = svc.model_info();
    Json(MetricsResponse {
        live: svc.live_metrics(),
        variant: info.as_ref().map(|(v, _)| v.to_string()),
        model_version: info.map(|(_, version)| version),
    })
}

async fn not_found() -> ApiError {
    ApiError(ServiceError::NotFound("route".into()))
}

pub fn router(svc: Shared) -> Router {
    Router::new()
        .route("/api/comments", post(post_comment))
        .route("/api/queue", get(get_queue))
        .route("/api/queue/{id}/decision", post(post_decision))
        .route("/api/items/{id}", get(get_item))
        .route("/api/items/{id}/audit", post(post_audit))
        .route("/api/thresholds", get(get_thresholds).put(put_thresholds))
        .route("/api/metrics", get(get_metrics))
        .fallback(not_found)
        .with_state(svc)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(svc: Shared, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(svc)).await
}
