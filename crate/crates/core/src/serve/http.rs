//! JSON-over-HTTP select endpoint.

use std::sync::Arc;
use std::time::Instant;

use arc_swap::ArcSwapOption;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Engine, Method, ServeConfig};
use crate::error::{Error, Result};
use crate::retrieval::Candidate;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SelectRequest {
    pub query: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectResponse {
    pub tools: Vec<Candidate>,
    pub generation: u64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub generation: u64,
    pub stage: Method,
}

#[derive(Debug)]
struct Shared {
    engine: ArcSwapOption<Engine>,
    stage: Method,
    default_k: usize,
}

/// Router state. The engine slot starts empty while artifacts load; until
/// it is filled every request gets a 503.
#[derive(Debug, Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn pending(stage: Method, default_k: usize) -> Self {
        AppState(Arc::new(Shared {
            engine: ArcSwapOption::empty(),
            stage,
            default_k,
        }))
    }

    pub fn ready(engine: Arc<Engine>, stage: Method, default_k: usize) -> Self {
        let state = AppState::pending(stage, default_k);
        state.set_engine(engine);
        state
    }

    pub fn set_engine(&self, engine: Arc<Engine>) {
        self.0.engine.store(Some(engine));
    }

    pub fn engine(&self) -> Option<Arc<Engine>> {
        self.0.engine.load_full()
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn not_ready() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "engine not ready")
}

async fn select(State(state): State<AppState>, body: Bytes) -> Response {
    let start = Instant::now();
    let req: SelectRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let Some(engine) = state.engine() else {
        return not_ready();
    };
    let k = req.k.unwrap_or(state.0.default_k);
    match engine.select(state.0.stage, &req.query, k) {
        Ok(sel) => Json(SelectResponse {
            tools: sel.candidates.entries,
            generation: sel.generation,
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        })
        .into_response(),
        Err(e @ (Error::Empty(_) | Error::ZeroK | Error::Lookup(_))) => {
            error(StatusCode::BAD_REQUEST, e.to_string())
        }
        Err(e @ Error::MissingArtifact(_)) => error(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn health(State(state): State<AppState>) -> Response {
    let Some(engine) = state.engine() else {
        return not_ready();
    };
    let slot = match state.0.stage {
        Method::OatsS1 => super::Slot::Refined,
        Method::OatsS2 => engine.pool_slot(),
        Method::OatsS3 => super::Slot::Adapted,
        _ => super::Slot::Base,
    };
    let generation = engine.table(slot).map_or(0, |t| t.generation());
    Json(HealthResponse {
        generation,
        stage: state.0.stage,
    })
    .into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/select", post(select))
        .route("/v1/health", get(health))
        .with_state(state)
}

/// Binds, loads the engine in the background (answering 503 meanwhile) and
/// serves until Ctrl-C.
pub async fn http_serve(config: ServeConfig) -> Result<()> {
    config.validate()?;
    let listener = tokio::net::TcpListener::bind(&config.bind)
        .await
        .map_err(|e| Error::io(&config.bind, e))?;
    let state = AppState::pending(config.stage, config.k);
    let loader = state.clone();
    let cfg = config.clone();
    let loading = tokio::task::spawn_blocking(move || -> Result<()> {
        let engine = Engine::load(&cfg)?;
        loader.set_engine(Arc::new(engine));
        Ok(())
    });
    log::info!("listening on {}", config.bind);
    let server = tokio::spawn(async move {
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    });
    let loaded = loading
        .await
        .map_err(|e| Error::config(format!("engine loader failed: {e}")))
        .and_then(|r| r);
    if let Err(e) = loaded {
        server.abort();
        return Err(e);
    }
    server
        .await
        .map_err(|e| Error::config(format!("server task failed: {e}")))?
        .map_err(|e| Error::io(&config.bind, e))
}
