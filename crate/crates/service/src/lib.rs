//! HTTP front end for interactive sessions.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/sessions` | [`CreateRequest`] |
//! | GET | `/sessions/{id}` | status |
//! | GET | `/sessions/{id}/frames` | server-sent stream of [`FrameRecord`] |
//! | POST | `/sessions/{id}/constraints` | array of [`WireConstraint`] |
//! | POST | `/sessions/{id}/cluster` | [`ClusterRequest`], may be empty |
//! | DELETE | `/sessions/{id}` | |

mod error;
mod session;
pub mod wire;

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use tokio::net::TcpListener;

pub use error::ApiError;
pub use session::{ServiceConfig, Session, SessionManager, DEFAULT_MAX_POINTS, DEFAULT_MAX_SESSIONS};
pub use wire::*;

pub const DEFAULT_PORT: u16 = 8787;
pub const PORT_ENV: &str = "IPBC_PORT";

/// Port from `IPBC_PORT`, defaulting to 8787.
pub fn port_from_env() -> Result<u16, String> {
    match std::env::var(PORT_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| format!("{PORT_ENV}={v:?} is not a port number")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

type AppState = Arc<SessionManager>;

pub fn router(manager: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(status).delete(delete))
        .route("/sessions/{id}/frames", get(frames))
        .route("/sessions/{id}/constraints", post(constraints))
        .route("/sessions/{id}/cluster", post(cluster))
        .layer(DefaultBodyLimit::max(256 * 1024 * 1024))
        .with_state(manager)
}

/// Serves until the listener fails or the process is interrupted.
pub async fn serve(listener: TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    let manager = Arc::new(SessionManager::new(config));
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn create(State(m): State<AppState>, Json(req): Json<CreateRequest>) -> Result<(StatusCode, Json<CreateResponse>), ApiError> {
    Ok((StatusCode::CREATED, Json(m.create(req).await?)))
}

async fn status(State(m): State<AppState>, Path(id): Path<String>) -> Result<Json<StatusResponse>, ApiError> {
    Ok(Json(m.get(&id)?.status_report().await?))
}

async fn delete(State(m): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    m.delete(&id).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn constraints(
    State(m): State<AppState>,
    Path(id): Path<String>,
    Json(records): Json<Vec<WireConstraint>>,
) -> Result<Json<SubmitResponse>, ApiError> {
    Ok(Json(m.get(&id)?.submit(records).await?))
}

async fn cluster(State(m): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<ClusterResponse>, ApiError> {
    let req = if body.iter().all(u8::is_ascii_whitespace) {
        ClusterRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::Params(e.to_string()))?
    };
    Ok(Json(m.get(&id)?.cluster(req).await?))
}

/// Latest-frame stream: each client sees strictly increasing epochs, at
/// most `max_fps` per second, and the stream ends when the session goes away.
async fn frames(
    State(m): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = m.get(&id)?;
    let rx = session.subscribe();
    drop(session);
    let period = Duration::from_secs_f64(1.0 / m.config().max_fps.max(0.1));
    let start = (rx, None::<usize>, None::<tokio::time::Instant>);
    let stream = stream::unfold(start, move |(mut rx, last, sent_at)| async move {
        if let Some(at) = sent_at {
            tokio::time::sleep_until(at + period).await;
        }
        loop {
            let frame = rx.borrow_and_update().clone();
            if last.is_none_or(|e| frame.epoch > e) {
                let event = Event::default().event("frame").json_data(&*frame).expect("frame serializes");
                return Some((Ok(event), (rx, Some(frame.epoch), Some(tokio::time::Instant::now()))));
            }
            // sender dropped: the session was deleted
            rx.changed().await.ok()?;
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
