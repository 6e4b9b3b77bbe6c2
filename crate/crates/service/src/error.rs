use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cabcompare_core::mesh_index::IndexError;
use cabcompare_core::PricingError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("index: {0}")]
    Index(#[from] IndexError),
    #[error("provider: {0}")]
    Pricing(#[from] PricingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// JSON error body: `{"error": "<code>", "message": "..."}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, error, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }

    pub fn loading() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "index-loading", "the trip index is still loading")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}
