//! HTTP surface. Every handler runs its service call on the blocking pool.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use crate::error::AnnotateError;
use crate::service::AnnotationService;
use crate::task::{AnnotationTask, BoxPrompt};

type Shared = Arc<AnnotationService>;

impl IntoResponse for AnnotateError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::error!("{self}");
        }
        let body = json!({"error": {"code": self.code(), "message": self.to_string()}});
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct BoxBody {
    #[serde(flatten)]
    prompt: BoxPrompt,
    #[serde(default)]
    annotator: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct ProposeBody {
    #[serde(default, rename = "box")]
    prompt: Option<BoxPrompt>,
    #[serde(default)]
    annotator: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct ReviewBody {
    #[serde(default)]
    reviewer: Option<String>,
}

/// Empty bodies mean "no options".
fn parse_optional<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, AnnotateError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| AnnotateError::BadRequest(e.to_string()))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, AnnotateError> + Send + 'static,
) -> Result<T, AnnotateError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| AnnotateError::Journal(format!("worker failed: {e}")))?
}

async fn list_tasks(State(s): State<Shared>) -> Json<Vec<AnnotationTask>> {
    Json(s.tasks())
}

async fn get_task(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<AnnotationTask>, AnnotateError> {
    Ok(Json(s.task(&id)?))
}

async fn set_box(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<AnnotationTask>, AnnotateError> {
    let b: BoxBody = serde_json::from_slice(&body).map_err(|e| AnnotateError::BadRequest(e.to_string()))?;
    Ok(Json(blocking(move || s.set_box(&id, b.prompt, b.annotator)).await?))
}

async fn propose(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<AnnotationTask>, AnnotateError> {
    let b: ProposeBody = parse_optional(&body)?;
    Ok(Json(blocking(move || s.propose(&id, b.prompt, b.annotator)).await?))
}

async fn accept(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<AnnotationTask>, AnnotateError> {
    let b: ReviewBody = parse_optional(&body)?;
    Ok(Json(blocking(move || s.accept(&id, b.reviewer)).await?))
}

async fn reject(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<AnnotationTask>, AnnotateError> {
    let b: ReviewBody = parse_optional(&body)?;
    Ok(Json(blocking(move || s.reject(&id, b.reviewer)).await?))
}

async fn image(
    State(s): State<Shared>,
    Path((id, channel)): Path<(String, String)>,
) -> Result<Response, AnnotateError> {
    let png = blocking(move || s.image_png(&id, &channel)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn not_found(uri: axum::http::Uri) -> AnnotateError {
    AnnotateError::UnknownRoute(uri.path().to_string())
}

pub fn router(service: Arc<AnnotationService>) -> Router {
    Router::new()
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/box", post(set_box))
        .route("/tasks/{id}/propose", post(propose))
        .route("/tasks/{id}/accept", post(accept))
        .route("/tasks/{id}/reject", post(reject))
        .route("/images/{id}/{channel}", get(image))
        .fallback(not_found)
        .with_state(service)
}

/// Serves until Ctrl-C.
pub async fn serve(service: Arc<AnnotationService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
