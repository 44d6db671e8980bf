//! JSON API over an [`InductiveSystem`]. Sessions live in memory; requests
//! to one session are serialized by its lock while different sessions run
//! side by side.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, PoisonError};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use super::{CliError, CliResult, Context, ServeArgs};
use crate::error::Error;
use crate::system::{InductiveSystem, Session};

pub struct AppState {
    system: InductiveSystem,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    sessions_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(system: InductiveSystem, sessions_dir: Option<PathBuf>) -> Self {
        AppState { system, sessions: Mutex::new(HashMap::new()), sessions_dir }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no session {id}")))
    }

    fn persist(&self, id: &str, session: &Session) -> crate::Result<()> {
        match &self.sessions_dir {
            Some(dir) => session.save_transcript(&dir.join(format!("{id}.jsonl"))),
            None => Ok(()),
        }
    }

    /// Writes every open session to the sessions directory, if one is set.
    pub fn persist_all(&self) -> crate::Result<()> {
        let sessions = self.sessions.lock().unwrap_or_else(PoisonError::into_inner);
        for (id, s) in sessions.iter() {
            self.persist(id, &s.lock().unwrap_or_else(PoisonError::into_inner))?;
        }
        Ok(())
    }
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::Invalid(_) | Error::EmptyInput(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

/// Routes under `/api`, with `static_dir` served for every other path.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}", get(transcript).delete(close_session))
        .route("/api/session/{id}/message", post(message))
        .route("/api/session/{id}/assessment", get(assessment))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn create_session(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    let id = format!("{:032x}", rand::random::<u128>());
    state
        .sessions
        .lock()
        .unwrap_or_else(PoisonError::into_inner)
        .insert(id.clone(), Arc::new(Mutex::new(Session::new())));
    (StatusCode::CREATED, Json(json!({ "session_id": id })))
}

async fn message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let MessageBody { text } = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("expected {{\"text\": string}}: {e}")))?;
    let session = state.session(&id)?;
    let outcome = blocking(move || {
        let mut session = session.lock().unwrap_or_else(PoisonError::into_inner);
        state.system.message(&mut session, &text)
    })
    .await?;
    Ok(Json(outcome).into_response())
}

async fn assessment(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let report = blocking(move || {
        let session = session.lock().unwrap_or_else(PoisonError::into_inner);
        state.system.assess(&session)
    })
    .await?;
    Ok(Json(report).into_response())
}

async fn transcript(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let turns = session.lock().unwrap_or_else(PoisonError::into_inner).transcript();
    Ok(Json(json!({ "session_id": id, "turns": turns })).into_response())
}

async fn close_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let session = state
        .sessions
        .lock()
        .unwrap_or_else(PoisonError::into_inner)
        .remove(&id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no session {id}")))?;
    let session = session.lock().unwrap_or_else(PoisonError::into_inner);
    state.persist(&id, &session)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> crate::Result<T> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

pub(crate) fn serve(ctx: Context, args: &ServeArgs) -> CliResult {
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Environment(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let addr = format!("{}:{}", args.host, args.port.unwrap_or(ctx.config.port));
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Environment(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Environment(e.to_string()))?;

        let system = ctx.system(&args.models)?;
        if let Some(dir) = &args.sessions_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let state = Arc::new(AppState::new(system, args.sessions_dir.clone()));
        let app = router(Arc::clone(&state), args.static_dir.clone());

        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Environment(format!("server stopped: {e}")))?;
        state.persist_all()?;
        Ok(())
    })
}
