//! HTTP routes. Handlers hand work to the blocking pool and translate
//! [`ApiError`] into the `{code, message}` envelope.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tower_http::services::ServeDir;

use crate::config::{Artifact, ServiceConfig};
use crate::pipeline::Models;
use crate::service::{ApiError, AppState, ChatRequest, CommitRequest, EditRequest, SearchItem};

#[derive(Serialize)]
struct Envelope<'a> {
    code: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = Json(Envelope {
            code: self.code,
            message: &self.message,
        });
        (status, body).into_response()
    }
}

fn rejected(r: JsonRejection) -> ApiError {
    ApiError::bad_request(r.body_text())
}

async fn blocking<T, F>(state: Arc<AppState>, f: F) -> Result<Json<T>, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map(Json)
}

async fn chat(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ChatRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body.map_err(rejected)?;
    blocking(state, move |s| s.chat(&req)).await
}

async fn edit(
    State(state): State<Arc<AppState>>,
    body: Result<Json<EditRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body.map_err(|r| match r {
        // Well-formed JSON whose attributes do not fit the schema.
        JsonRejection::JsonDataError(e) => ApiError::unprocessable(e.body_text()),
        other => rejected(other),
    })?;
    blocking(state, move |s| s.edit(&req)).await
}

async fn commit(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CommitRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body.map_err(rejected)?;
    blocking(state, move |s| s.commit(&req)).await
}

#[derive(Serialize)]
struct SearchReply {
    items: Vec<SearchItem>,
}

async fn search(
    State(state): State<Arc<AppState>>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<impl IntoResponse, ApiError> {
    let q = params.get("q").cloned().unwrap_or_default();
    let k = match params.get("k") {
        Some(raw) => raw.parse::<usize>().map_err(|_| {
            ApiError::bad_request(format!("k must be a positive integer, got `{raw}`"))
        })?,
        None => state.k(),
    };
    blocking(state, move |s| {
        s.search(&q, k).map(|items| SearchReply { items })
    })
    .await
}

async fn health(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(state.health())
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/chat", post(chat))
        .route("/api/design/edit", post(edit))
        .route("/api/design/commit", post(commit))
        .route("/api/search", get(search))
        .route("/api/health", get(health))
        .route("/api/{*rest}", get(not_found).post(not_found))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Loads artifacts, restores the session snapshot and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<()> {
    let models = Models::load(&config)?;
    let state = Arc::new(AppState::new(
        models,
        config.k,
        Some(config.data_dir.clone()),
    ));
    let snapshot = config.path(Artifact::Sessions);
    if snapshot.exists() {
        let text = std::fs::read_to_string(&snapshot)
            .with_context(|| format!("cannot read {}", snapshot.display()))?;
        let (kept, dropped) = state
            .restore(&text)
            .with_context(|| format!("restoring {}", snapshot.display()))?;
        tracing::info!(kept, dropped, "restored sessions");
    }
    if let Some(dir) = &config.static_dir {
        if !dir.is_dir() {
            anyhow::bail!("static directory {} does not exist", dir.display());
        }
    }

    let ticker = {
        let state = state.clone();
        let every = Duration::from_secs(config.snapshot_interval_secs.max(1));
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(every);
            interval.tick().await;
            loop {
                interval.tick().await;
                let s = state.clone();
                match tokio::task::spawn_blocking(move || s.save_snapshot()).await {
                    Ok(Err(e)) => tracing::warn!("session snapshot failed: {e:#}"),
                    Err(e) => tracing::warn!("session snapshot task failed: {e}"),
                    Ok(Ok(_)) => {}
                }
            }
        })
    };

    let addr = format!("{}:{}", config.listen, config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state.clone(), config.static_dir.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    ticker.abort();
    if let Some(path) = state.save_snapshot()? {
        tracing::info!("saved sessions to {}", path.display());
    }
    Ok(())
}
