//! HTTP front end for the gateway, versioned under `/v1`.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::corpus::Role;
use crate::restorer::RestoredText;
use crate::sanitizer::SanitizedMessage;

use super::{Gateway, GatewayError, TurnAudit};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SanitizeRequest {
    pub user_id: String,
    pub text: String,
    #[serde(default)]
    pub real_name: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RestoreRequest {
    pub user_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRequest {
    pub user_id: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub real_name: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatResponse {
    /// Restored reply, or the raw cloud reply for non-reversible strategies.
    pub reply: Option<String>,
    pub audit: TurnAudit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, error: impl ToString) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.to_string(),
                kind: kind.to_string(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = r.status();
        let status = if status.is_client_error() {
            status
        } else {
            StatusCode::BAD_REQUEST
        };
        Self::new(status, "bad_request", r.body_text())
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let (status, kind) = match &e {
            GatewayError::PlaceholderInInput { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "placeholder_in_input"),
            GatewayError::EmptyUser => (StatusCode::BAD_REQUEST, "empty_user"),
            GatewayError::Extraction(_) => (StatusCode::BAD_GATEWAY, "extraction"),
            GatewayError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "store"),
            GatewayError::Config(_) => (StatusCode::INTERNAL_SERVER_ERROR, "config"),
        };
        Self::new(status, kind, e)
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

async fn sanitize_handler(
    State(gw): State<Arc<Gateway>>,
    body: Result<Json<SanitizeRequest>, JsonRejection>,
) -> ApiResult<SanitizedMessage> {
    let Json(req) = body?;
    blocking(move || Ok(gw.sanitize_text(&req.user_id, &req.text, req.real_name.as_deref())?))
        .await
        .map(Json)
}

async fn restore_handler(
    State(gw): State<Arc<Gateway>>,
    body: Result<Json<RestoreRequest>, JsonRejection>,
) -> ApiResult<RestoredText> {
    let Json(req) = body?;
    if req.user_id.is_empty() {
        return Err(GatewayError::EmptyUser.into());
    }
    blocking(move || Ok(gw.restore_text(&req.user_id, &req.text)))
        .await
        .map(Json)
}

/// The last user message is the new turn; earlier ones are already in the session history.
async fn chat_handler(
    State(gw): State<Arc<Gateway>>,
    body: Result<Json<ChatRequest>, JsonRejection>,
) -> ApiResult<ChatResponse> {
    let Json(req) = body?;
    let Some(last) = req.messages.iter().rev().find(|m| m.role == Role::User) else {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_request",
            "messages must contain a user message",
        ));
    };
    let content = last.content.clone();
    blocking(move || {
        let audit = gw.process_turn(&req.user_id, &content, req.real_name.as_deref())?;
        Ok(ChatResponse {
            reply: audit.restored.clone(),
            audit,
        })
    })
    .await
    .map(Json)
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/sanitize", post(sanitize_handler))
        .route("/v1/restore", post(restore_handler))
        .route("/v1/chat", post(chat_handler))
        .with_state(gateway)
}

/// Serves on an already-bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    gateway: Arc<Gateway>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(gateway))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, gateway: Arc<Gateway>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    serve_on(listener, gateway, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}

/// A server running on its own runtime thread; stops when dropped.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    pub fn start(addr: SocketAddr, gateway: Arc<Gateway>) -> std::io::Result<Self> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel();
        let thread = std::thread::spawn(move || {
            rt.block_on(serve_on(listener, gateway, async {
                let _ = rx.await;
            }))
        });
        Ok(Self {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
