use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use super::auth::TokenError;
use crate::engine::EngineError;
use crate::ingest::FetchStatus;
use crate::store::StoreError;

/// Renders as `{"error": {"code", "message"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub fetch_status: Option<FetchStatus>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), fetch_status: None }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_error", message)
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(status) = self.fetch_status {
            error["fetch_status"] = serde_json::to_value(status).unwrap_or_default();
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

impl From<TokenError> for ApiError {
    fn from(err: TokenError) -> Self {
        let code = match err {
            TokenError::Invalid => "invalid_token",
            TokenError::Expired => "token_expired",
            TokenError::AddressChanged => "address_changed",
        };
        ApiError::new(StatusCode::UNAUTHORIZED, code, err.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(err: StoreError) -> Self {
        match err {
            StoreError::Invalid(msg) => ApiError::validation(msg),
            StoreError::Conflict(msg) => ApiError::new(StatusCode::CONFLICT, "conflict", msg),
            StoreError::NotFound(msg) => ApiError::not_found(msg),
            other => {
                tracing::error!(%other, "store failure");
                ApiError::internal("storage failure")
            }
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(err: EngineError) -> Self {
        match err {
            EngineError::Input(msg) => ApiError::validation(msg),
            EngineError::Upstream { url, status } => ApiError {
                status: StatusCode::BAD_GATEWAY,
                code: "upstream_error",
                message: format!("could not fetch {url}"),
                fetch_status: Some(status),
            },
            EngineError::Extraction(msg) => ApiError::new(StatusCode::BAD_GATEWAY, "extraction_failed", msg),
            EngineError::NotFound(msg) => ApiError::not_found(msg),
            EngineError::SealInProgress => ApiError::new(StatusCode::CONFLICT, "seal_in_progress", err.to_string()),
            EngineError::Store(inner) => inner.into(),
            EngineError::Setup(msg) => {
                tracing::error!(%msg, "setup failure");
                ApiError::internal("server misconfigured")
            }
        }
    }
}
