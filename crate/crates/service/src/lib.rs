//! HTTP front end for the what-if engine.

use std::future::Future;
use std::path::Path;
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, patch, post};
use axum::Router;
use serde::Serialize;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use whatif_core::dataset::{ingest, DeclaredFeature, Format};
use whatif_core::model::{ModelHandle, ModelSlot, ModelSource, TaskKind};
use whatif_core::report;

mod error;
mod routes;
mod state;

pub use error::ApiError;
pub use routes::parse_range;
pub use state::{AppState, ServiceConfig, Session, Settings, DEFAULT_SESSION, SESSION_HEADER};

/// Upload size cap.
pub const MAX_BODY_BYTES: usize = 512 * 1024 * 1024;

/// Serializes `value` exactly as the library reports do.
pub fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    let mut response = (status, report::to_json(value)).into_response();
    response
        .headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    response
}

pub fn router(state: Arc<AppState>) -> Router {
    let mut app = Router::new()
        .route("/health", get(routes::health))
        .route("/session", get(routes::get_session))
        .route("/session/settings", patch(routes::update_settings))
        .route("/sessions", post(routes::create_session))
        .route("/sessions/{id}", delete(routes::delete_session))
        .route("/datasets", post(routes::upload_dataset))
        .route("/datasets/{d}/stats", get(routes::dataset_stats))
        .route("/datasets/{d}/points", get(routes::dataset_points))
        .route(
            "/datasets/{d}/points/{id}",
            patch(routes::edit_point).delete(routes::delete_point),
        )
        .route("/datasets/{d}/points/{id}/duplicate", post(routes::duplicate_point))
        .route("/datasets/{d}/points/{id}/history", get(routes::point_history))
        .route("/models", post(routes::register_model))
        .route("/models/{slot}", delete(routes::remove_model))
        .route("/predict", post(routes::predict))
        .route("/analysis/bins", get(routes::analysis_bins))
        .route("/analysis/counterfactual", get(routes::analysis_counterfactual))
        .route("/analysis/distance-feature", post(routes::analysis_distance_feature))
        .route("/analysis/pdp", get(routes::analysis_pdp))
        .route("/analysis/performance", get(routes::analysis_performance))
        .route("/analysis/fairness", post(routes::analysis_fairness))
        .fallback(routes::not_found);
    if let Some(dir) = &state.config.ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    if state.config.cors {
        app = app.layer(CorsLayer::permissive());
    }
    app.layer(DefaultBodyLimit::max(MAX_BODY_BYTES)).with_state(state)
}

/// Loads a dataset file into the default session.
pub fn preload_dataset(state: &AppState, path: &Path, schema: Option<&[DeclaredFeature]>) -> whatif_core::Result<String> {
    let bytes = std::fs::read(path)?;
    let name = path.to_string_lossy().into_owned();
    let dataset = ingest(&bytes, Format::from_path(&name), schema)?;
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned());
    Ok(state.default_session().write().load(dataset, file_name))
}

/// Registers a built-in model file or remote endpoint in the default session.
pub fn preload_model(
    state: &AppState,
    slot: ModelSlot,
    source: &str,
    task: Option<TaskKind>,
) -> whatif_core::Result<()> {
    let handle = ModelHandle::from_source(slot, model_source(source, task)?, None, &state.config.remote)?;
    state.default_session().write().models.register(handle)?;
    Ok(())
}

/// `http(s)://` sources are remote endpoints; anything else is a model file.
pub fn model_source(source: &str, task: Option<TaskKind>) -> whatif_core::Result<ModelSource> {
    if source.starts_with("http://") || source.starts_with("https://") {
        let task = task.ok_or_else(|| {
            whatif_core::Error::InvalidArgument("a remote model needs its task declared".into())
        })?;
        return Ok(ModelSource::Remote { url: source.to_string(), task });
    }
    let text = std::fs::read_to_string(source)?;
    let spec = serde_json::from_str(&text)
        .map_err(|e| whatif_core::Error::InvalidArgument(format!("model file {source}: {e}")))?;
    Ok(ModelSource::Builtin(spec))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
