//! JSON API over a [`SessionManager`], optionally serving a static UI.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use facetalk_core::{SessionError, SessionManager};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

#[derive(Clone)]
struct AppState {
    sessions: Arc<SessionManager>,
    schema_json: Arc<str>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "BAD_REQUEST",
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::TooLong { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            SessionError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"code": self.code, "message": self.message})),
        )
            .into_response()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceBody {
    text: String,
}

/// Runs a blocking session call off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, SessionError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "INTERNAL",
            message: e.to_string(),
        })?
        .map_err(ApiError::from)
}

async fn create(State(app): State<AppState>) -> Response {
    let id = app.sessions.create_session();
    (StatusCode::CREATED, Json(json!({"session_id": id}))).into_response()
}

async fn utterance(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let body: UtteranceBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let turn = blocking(move || app.sessions.handle_utterance(&id, &body.text)).await?;
    Ok(Json(turn).into_response())
}

async fn state(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let view = blocking(move || app.sessions.get_state(&id)).await?;
    Ok(Json(view).into_response())
}

async fn remove(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    blocking(move || app.sessions.delete_session(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn schema(State(app): State<AppState>) -> Response {
    (
        [(header::CONTENT_TYPE, "application/json")],
        app.schema_json.to_string(),
    )
        .into_response()
}

async fn no_route() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "NOT_FOUND",
        message: "no such route".into(),
    }
}

/// The API router. `schema_json` is served verbatim at `/v1/schema` so
/// clients can label tags; `ui_dir`, when given, is served at `/`.
pub fn router(
    sessions: Arc<SessionManager>,
    schema_json: impl Into<Arc<str>>,
    ui_dir: Option<PathBuf>,
) -> Router {
    let app = AppState {
        sessions,
        schema_json: schema_json.into(),
    };
    let api = Router::new()
        .route("/v1/schema", get(schema))
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}/utterances", post(utterance))
        .route("/v1/sessions/{id}/state", get(state))
        .route("/v1/sessions/{id}", axum::routing::delete(remove))
        .route("/v1/{*rest}", axum::routing::any(no_route))
        .with_state(app);
    match ui_dir {
        Some(dir) => {
            api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true))
        }
        None => api.fallback(no_route),
    }
}
