use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::service::ListenService;
use crate::session::SessionConfig;
use crate::ListenError;

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgement {
    Same,
    Different,
}

#[derive(Debug, Deserialize)]
pub struct AnswerBody {
    pub answer: Judgement,
}

impl IntoResponse for ListenError {
    fn into_response(self) -> Response {
        let status = match &self {
            ListenError::UnknownSession(_) | ListenError::UnknownTrial { .. } | ListenError::UnknownToken => {
                StatusCode::NOT_FOUND
            }
            ListenError::Duplicate(_) | ListenError::Conflict(_) | ListenError::Incomplete(_) | ListenError::NotFinalized => {
                StatusCode::CONFLICT
            }
            ListenError::InvalidConfig(_) => StatusCode::BAD_REQUEST,
            ListenError::InsufficientCorpus(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ListenError::Io(_) | ListenError::CorruptLog { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

type Svc = State<Arc<ListenService>>;

async fn create(State(svc): Svc, body: Option<Json<SessionConfig>>) -> Result<impl IntoResponse, ListenError> {
    let cfg = body.map(|Json(c)| c).unwrap_or_default();
    Ok((StatusCode::CREATED, Json(svc.create_session(cfg)?)))
}

async fn trial(State(svc): Svc, Path((id, k)): Path<(String, usize)>) -> Result<impl IntoResponse, ListenError> {
    Ok(Json(svc.trial(&id, k)?))
}

async fn audio(State(svc): Svc, Path(token): Path<String>) -> Result<impl IntoResponse, ListenError> {
    Ok(([(header::CONTENT_TYPE, "audio/wav")], svc.audio(&token)?))
}

async fn answer(
    State(svc): Svc,
    Path((id, k)): Path<(String, usize)>,
    Json(body): Json<AnswerBody>,
) -> Result<impl IntoResponse, ListenError> {
    Ok(Json(svc.answer(&id, k, matches!(body.answer, Judgement::Same))?))
}

async fn finalize(State(svc): Svc, Path(id): Path<String>) -> Result<impl IntoResponse, ListenError> {
    Ok(Json(svc.finalize(&id)?))
}

async fn report(State(svc): Svc, Path(id): Path<String>) -> Result<impl IntoResponse, ListenError> {
    Ok(Json(svc.report(&id)?))
}

pub fn router(svc: Arc<ListenService>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/trials/{k}", get(trial))
        .route("/sessions/{id}/trials/{k}/answer", post(answer))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/report", get(report))
        .route("/audio/{token}", get(audio))
        .with_state(svc)
}

/// Serves until ctrl-c.
pub async fn serve(svc: Arc<ListenService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
