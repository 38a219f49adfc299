//! HTTP chat service.
//!
//! `POST /sessions`, `GET /sessions/{id}`, `POST /sessions/{id}/message`,
//! `POST /sessions/{id}/rating`, `GET /variants`, `GET /aggregate`, and the
//! static chat bundle at `/`.

mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use missa_core::api::{Aggregate, CreateSession, ErrorBody, MessageReply, PostMessage, RatingReply, SessionView, VariantList};
use missa_core::corpus::SlotLexicon;
use missa_core::pipeline::ModelSet;
use missa_core::session::{aggregate, ChatConfig, NewSession, Ratings, Session, SessionEvent};
use missa_core::Error;
use tower_http::services::ServeDir;

pub use store::{SessionHandle, SessionStore};

/// Environment variable holding the listening port.
pub const PORT_ENV: &str = "MISSA_PORT";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub chat: ChatConfig,
    /// The system's private information in new sessions.
    pub persona: SlotLexicon,
    /// Directory holding the chat bundle, served at `/`.
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct AppState {
    models: Arc<ModelSet>,
    config: Arc<ServiceConfig>,
    store: Arc<SessionStore>,
}

impl AppState {
    pub async fn new(models: ModelSet, config: ServiceConfig, data_dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        Ok(Self {
            models: Arc::new(models),
            config: Arc::new(config),
            store: Arc::new(SessionStore::open(data_dir.into().join("sessions")).await?),
        })
    }

    fn task(&self) -> String {
        self.models.taxonomy().map(|t| t.task.clone()).unwrap_or_default()
    }
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Validation(_) | Error::InvalidLexicon(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::ContextOverflow { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("storage: {e}"))
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(e.status(), e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.0.is_server_error() {
            tracing::error!(status = %self.0, "{}", self.1);
        }
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn session(state: &AppState, id: &str) -> ApiResult<SessionHandle> {
    state
        .store
        .get(id)
        .await
        .ok_or_else(|| Error::NotFound(format!("session {id}")).into())
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let Json(req) = body?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let seed = req.seed.unwrap_or_else(|| {
        let bytes = uuid::Uuid::new_v4().into_bytes();
        u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    });
    let (session, created) = Session::create(
        &state.models,
        NewSession {
            id,
            task: req.task.unwrap_or_else(|| state.task()),
            variant: req.variant,
            seed,
            blind: req.blind,
            lexicon: req.lexicon.unwrap_or_else(|| state.config.persona.clone()),
        },
    )?;
    let view = SessionView::from(&session);
    state.store.insert(session, &created).await?;
    tracing::info!(id = %view.id, variant = %view.variant, seed, "session created");
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let handle = session(&state, &id).await?;
    let s = handle.lock().await;
    Ok(Json(SessionView::from(&*s)))
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<PostMessage>, JsonRejection>,
) -> ApiResult<Json<MessageReply>> {
    let handle = session(&state, &id).await?;
    let Json(req) = body?;
    let mut guard = handle
        .try_lock()
        .map_err(|_| Error::Conflict(format!("session {id} is already handling a message")))?;
    let snapshot = guard.clone();
    let (models, config) = (state.models.clone(), state.config.clone());
    let event = tokio::task::spawn_blocking(move || snapshot.exchange(&models, &config.chat, &req.text))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    state.store.record(&mut guard, &event).await?;
    let SessionEvent::Exchange { system, .. } = event else {
        unreachable!("exchange yields an exchange event")
    };
    Ok(Json(MessageReply {
        reply: system.text,
        trace: system.trace.expect("system messages carry a trace"),
        blind: guard.blind,
        stats: guard.stats(),
    }))
}

async fn post_rating(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<Ratings>, JsonRejection>,
) -> ApiResult<Json<RatingReply>> {
    let handle = session(&state, &id).await?;
    let Json(ratings) = body?;
    let (stats, variant) = {
        let mut guard = handle
            .try_lock()
            .map_err(|_| Error::Conflict(format!("session {id} is busy")))?;
        let event = guard.rate(ratings)?;
        state.store.record(&mut guard, &event).await?;
        (guard.stats(), guard.variant.to_string())
    };
    let aggregate = collect_aggregate(&state).await.remove(&variant).unwrap_or_default();
    Ok(Json(RatingReply {
        ratings,
        stats,
        aggregate,
    }))
}

async fn collect_aggregate(state: &AppState) -> Aggregate {
    let mut sessions = Vec::new();
    for handle in state.store.all().await {
        sessions.push(handle.lock().await.clone());
    }
    aggregate(&sessions)
}

async fn get_aggregate(State(state): State<AppState>) -> Json<Aggregate> {
    Json(collect_aggregate(&state).await)
}

async fn get_variants(State(state): State<AppState>) -> Json<VariantList> {
    Json(VariantList {
        task: state.task(),
        variants: state.models.variants(),
    })
}

async fn placeholder() -> Html<&'static str> {
    Html(
        "<!doctype html><title>missa</title><p>No chat bundle is installed. \
         Start the service with <code>--ui-dir</code> to serve one; the JSON API is under \
         <code>/sessions</code>, <code>/variants</code> and <code>/aggregate</code>.</p>",
    )
}

pub fn router(state: AppState) -> Router {
    let ui = state.config.ui_dir.clone();
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/message", post(post_message))
        .route("/sessions/{id}/rating", post(post_rating))
        .route("/variants", get(get_variants))
        .route("/aggregate", get(get_aggregate))
        .with_state(state);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    }
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Binds `addr` and serves in a background task; returns the bound address.
pub async fn start(addr: SocketAddr, state: AppState) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    let task = tokio::spawn(async move { axum::serve(listener, router(state)).await });
    Ok((bound, task))
}
