//! JSON-over-HTTP front end for the failure predictor and scheduler.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/healthz` | liveness and registry counts |
//! | POST | `/datasets` | upload CSV or JSON tasks |
//! | POST | `/models` | upload a model file or train one |
//! | POST | `/predict` | `{p0, p1, p2}` for a task or for feature vectors |
//! | POST | `/schedule` | batch schedule |
//! | POST | `/sessions` | start (or replay) a rolling session |
//! | GET | `/sessions/{id}` | session view |
//! | GET | `/sessions/{id}/next` | predictions for the task at the cursor |
//! | POST | `/sessions/{id}/decide` | commit `{offset}` for the task at the cursor |
//! | POST | `/sessions/{id}/snapshot` | replayable session state, written to disk if configured |
//!
//! Requests without `dataset_id` or `model_id` use the most recently
//! registered one.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;

pub mod api;
pub mod error;
pub mod state;

pub use error::ApiError;
pub use state::{AppState, SessionSnapshot, SessionView};

/// Env var read for the listen address when no flag is given.
pub const LISTEN_ENV: &str = "CROWD_SCHED_LISTEN";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(api::healthz))
        .route("/datasets", post(api::post_dataset))
        .route("/models", post(api::post_model))
        .route("/predict", post(api::post_predict))
        .route("/schedule", post(api::post_schedule))
        .route("/sessions", post(api::post_session))
        .route("/sessions/{id}", get(api::get_session))
        .route("/sessions/{id}/next", get(api::get_next))
        .route("/sessions/{id}/decide", post(api::post_decide))
        .route("/sessions/{id}/snapshot", post(api::post_snapshot))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
