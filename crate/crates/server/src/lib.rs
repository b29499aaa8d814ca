//! HTTP/JSON service over pruning sessions. See `docs/api.md` for the schemas.

pub mod error;
pub mod routes;
pub mod state;

use std::sync::Arc;

use axum::response::Html;
use axum::routing::{delete, get, post};
use axum::Router;
use tokio::net::TcpListener;
use tower_http::services::{ServeDir, ServeFile};

pub use error::{ApiError, ApiResult};
pub use state::{AppState, ServerConfig, SessionEntry};

pub const DEFAULT_PORT: u16 = 8080;

const NO_UI: &str = "<!doctype html>\n<html><head><title>vinnpruner</title></head><body>\n\
<h1>vinnpruner</h1>\n<p>The web UI is not built. The JSON API is available under \
<a href=\"/api/models\">/api</a>.</p>\n</body></html>\n";

pub fn router(state: Arc<AppState>) -> Router {
    use routes::*;
    let api = Router::new()
        .route("/api/models", get(list_models))
        .route("/api/datasets", get(list_datasets))
        .route("/api/settings/defaults", get(settings_defaults))
        .route("/api/sessions", get(list_sessions).post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/steps", get(list_steps))
        .route("/api/sessions/{id}/steps/{step_id}", delete(remove_step))
        .route("/api/sessions/{id}/prune", post(prune))
        .route("/api/sessions/{id}/edits", post(apply_edits))
        .route("/api/sessions/{id}/revert", post(revert))
        .route("/api/sessions/{id}/layers/{layer}/mask", get(get_mask))
        .route("/api/sessions/{id}/metrics", get(get_metrics))
        .route("/api/sessions/{id}/compare", get(compare))
        .route("/api/sessions/{id}/featuremaps", get(get_feature_maps))
        .route("/api/sessions/{id}/featuremaps/mark", post(mark_channel))
        .route("/api/sessions/{id}/pending", get(pending));
    let api = match &state.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(dir.join("index.html")))),
        None => api.fallback(|| async { Html(NO_UI) }),
    };
    api.with_state(state)
}

/// Serves until ctrl-c. Sessions found under the sessions directory are restored first.
pub async fn serve(config: ServerConfig, listener: TcpListener) -> std::io::Result<()> {
    let state = Arc::new(AppState::new(config));
    for (id, reason) in state.restore_sessions() {
        tracing::warn!(session = %id, %reason, "skipping unreadable session archive");
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
