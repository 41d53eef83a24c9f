//! HTTP API over a [`Workspace`].
//!
//! | Method | Path | Body | Response |
//! |---|---|---|---|
//! | GET | `/health` | | engine version |
//! | POST | `/scenes` | `Scene` | 201, `StoredScene` |
//! | GET | `/scenes/{id}` | | `StoredScene` |
//! | PUT | `/scenes/{id}` | `{version, scene}` | `StoredScene`, 409 on a stale version |
//! | POST | `/scenes/{id}/targets[?version=n]` | `TargetInput` | `PinnedTarget` |
//! | DELETE | `/scenes/{id}/targets?version=n` | | `StoredScene` |
//! | POST | `/scenes/{id}/plan` | optional `PlanRequest` | `PlanRecord` |
//! | GET | `/scenes/{id}/overlay[?polar_step_deg&azimuth_step_deg]` | | `Overlay` |
//! | POST | `/scenes/{id}/whatif` | `WhatIfRequest` | `WhatIfRow` |
//! | GET | `/plans/{inputs_sha256}` | | `PlanRecord` |
//!
//! Failures are `{"error": {"code", "message"}}` with a 4xx status for
//! anything the caller can fix.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use retplan_core::access::GridMeta;
use retplan_core::workflow::{PlanRequest, Scene, TargetInput, WhatIfRequest, Workspace};
use retplan_core::Error;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::VersionConflict { .. } => StatusCode::CONFLICT,
            Error::Json(_) => StatusCode::BAD_REQUEST,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self {
            status,
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad_request(message: String) -> ApiError {
    ApiError {
        status: StatusCode::BAD_REQUEST,
        code: "invalid_json".into(),
        message,
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| bad_request(e.to_string()))
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> retplan_core::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal".into(),
            message: e.to_string(),
        })?
        .map_err(ApiError::from)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PutScene {
    pub version: u64,
    pub scene: Scene,
}

#[derive(Debug, Default, Deserialize)]
pub struct VersionQuery {
    pub version: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
pub struct GridQuery {
    pub polar_step_deg: Option<f64>,
    pub azimuth_step_deg: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    engine_version: &'static str,
}

type Ws = Arc<Workspace>;

pub fn router(ws: Ws) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/scenes", post(create_scene))
        .route("/scenes/:id", get(get_scene).put(put_scene))
        .route("/scenes/:id/targets", post(pin_target).delete(clear_targets))
        .route("/scenes/:id/plan", post(plan))
        .route("/scenes/:id/overlay", get(overlay))
        .route("/scenes/:id/whatif", post(whatif))
        .route("/plans/:hash", get(get_plan))
        .with_state(ws)
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok",
        engine_version: retplan_core::ENGINE_VERSION,
    })
}

async fn create_scene(State(ws): State<Ws>, body: Bytes) -> ApiResult<Response> {
    let scene: Scene = parse(&body)?;
    let stored = blocking(move || ws.create_scene(scene)).await?;
    Ok((StatusCode::CREATED, Json(stored)).into_response())
}

async fn get_scene(State(ws): State<Ws>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(ws.get_scene(&id)?).into_response())
}

async fn put_scene(State(ws): State<Ws>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: PutScene = parse(&body)?;
    let stored = blocking(move || ws.put_scene(&id, req.scene, req.version)).await?;
    Ok(Json(stored).into_response())
}

async fn pin_target(
    State(ws): State<Ws>,
    Path(id): Path<String>,
    Query(q): Query<VersionQuery>,
    body: Bytes,
) -> ApiResult<Response> {
    let input: TargetInput = parse(&body)?;
    let pinned = blocking(move || ws.pin_target(&id, input, q.version)).await?;
    Ok(Json(pinned).into_response())
}

async fn clear_targets(State(ws): State<Ws>, Path(id): Path<String>, Query(q): Query<VersionQuery>) -> ApiResult<Response> {
    let version = q
        .version
        .ok_or_else(|| ApiError::from(Error::InvalidInput("version query parameter is required".into())))?;
    Ok(Json(ws.clear_targets(&id, version)?).into_response())
}

async fn plan(State(ws): State<Ws>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: Option<PlanRequest> = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        Some(parse(&body)?)
    };
    let record = blocking(move || ws.plan_scene(&id, req)).await?;
    Ok(Json(record).into_response())
}

pub fn grid_from_query(q: &GridQuery) -> retplan_core::Result<GridMeta> {
    let d = GridMeta::default();
    GridMeta::new(
        q.polar_step_deg.unwrap_or(d.polar_step_deg),
        q.azimuth_step_deg.unwrap_or(d.azimuth_step_deg),
        d.polar_min_deg,
    )
}

async fn overlay(State(ws): State<Ws>, Path(id): Path<String>, Query(q): Query<GridQuery>) -> ApiResult<Response> {
    let grid = grid_from_query(&q)?;
    let o = blocking(move || ws.scene_overlay(&id, grid)).await?;
    Ok(Json(o).into_response())
}

async fn whatif(State(ws): State<Ws>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: WhatIfRequest = parse(&body)?;
    let row = blocking(move || ws.scene_what_if(&id, &req)).await?;
    Ok(Json(row).into_response())
}

async fn get_plan(State(ws): State<Ws>, Path(hash): Path<String>) -> ApiResult<Response> {
    Ok(Json(ws.load_plan(&hash)?).into_response())
}

/// Serves the API on `addr` until Ctrl-C.
pub async fn serve(ws: Workspace, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(ws)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
