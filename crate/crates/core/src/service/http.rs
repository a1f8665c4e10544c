//! JSON over HTTP/1.1.
//!
//! | route | method | body |
//! |---|---|---|
//! | `/register` | POST | counts payload |
//! | `/predict` | POST | `{"client_id", "text"}` or `{"client_id", "tokens"}` |
//! | `/vocab` | GET | |
//! | `/clients` | GET | |
//! | `/health` | GET | |
//!
//! Errors are `{"error_code", "message"}`: 404 for an unregistered client,
//! 400 for malformed or inconsistent requests, 500 otherwise.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::Service;
use crate::error::{Error, Result};
use crate::sketch::CountsPayload;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictRequest {
    pub client_id: String,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub tokens: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub client_id: String,
    pub sketch_variant: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabResponse {
    pub words: Vec<String>,
    pub vocab_hash: String,
    pub sketch_variant: String,
}

pub struct ApiError(pub Error);

pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::UnregisteredClient(_) => StatusCode::NOT_FOUND,
        Error::VocabMismatch { .. }
        | Error::EmptySketch
        | Error::EmptyInstance
        | Error::DimensionMismatch { .. }
        | Error::InvalidArgument(_)
        | Error::Json(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error_code": self.0.code(), "message": self.0.to_string()});
        (status_for(&self.0), Json(body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Error::Http(format!("worker failed: {e}")))?
}

async fn health(State(svc): State<Arc<Service>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "model_version": svc.model_version()}))
}

async fn vocab(State(svc): State<Arc<Service>>) -> Json<VocabResponse> {
    Json(VocabResponse {
        words: svc.bundle().vocab.words().to_vec(),
        vocab_hash: svc.vocab_hash().to_string(),
        sketch_variant: svc.sketch_variant().as_str().to_string(),
    })
}

async fn clients(State(svc): State<Arc<Service>>) -> Json<serde_json::Value> {
    let list: Vec<_> = svc
        .records()
        .iter()
        .map(|r| json!({"client_id": r.client_id, "name": r.name, "registered_at": r.registered_at}))
        .collect();
    Json(json!({"clients": list}))
}

async fn register(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<RegisterResponse> {
    let payload: CountsPayload = serde_json::from_slice(&body).map_err(Error::from)?;
    let rec = blocking({
        let svc = svc.clone();
        move || svc.register(&payload)
    })
    .await?;
    Ok(Json(RegisterResponse {
        client_id: rec.client_id.clone(),
        sketch_variant: svc.sketch_variant().as_str().to_string(),
    }))
}

async fn predict(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<super::Prediction> {
    let req: PredictRequest = serde_json::from_slice(&body).map_err(Error::from)?;
    let pred = blocking(move || match (req.tokens, req.text) {
        (Some(tokens), _) => svc.predict_tokens(&req.client_id, &tokens),
        (None, Some(text)) => svc.predict_text(&req.client_id, &text),
        (None, None) => Err(Error::InvalidArgument("request needs text or tokens".into())),
    })
    .await?;
    Ok(Json(pred))
}

async fn not_found() -> Response {
    let body = json!({"error_code": "not_found", "message": "no such route"});
    (StatusCode::NOT_FOUND, Json(body)).into_response()
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/vocab", get(vocab))
        .route("/clients", get(clients))
        .route("/register", post(register))
        .route("/predict", post(predict))
        .fallback(not_found)
        .with_state(service)
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    service: Arc<Service>,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(service, listener, shutdown).await
}

pub async fn serve_on(
    service: Arc<Service>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    tracing::info!(addr = %listener.local_addr()?, model_version = service.model_version(), "serving");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}
