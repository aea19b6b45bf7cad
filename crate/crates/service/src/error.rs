use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cotscore_core::workspace::WorkspaceError;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ApiError {
    /// Stable machine-readable code, e.g. `NotFound` or `IterationQuotaExceeded`.
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> ApiError {
        ApiError {
            code: code.to_string(),
            message: message.into(),
            detail: serde_json::Value::Null,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new("BadRequest", message)
    }

    pub fn not_found(kind: &str, id: &str) -> ApiError {
        ApiError {
            code: "NotFound".into(),
            message: format!("{kind} {id:?} not found"),
            detail: serde_json::json!({"kind": kind, "id": id}),
        }
    }

    pub fn internal(message: impl Into<String>) -> ApiError {
        ApiError::new("Internal", message)
    }

    pub fn status(&self) -> StatusCode {
        status_for(&self.code)
    }
}

/// HTTP status for an error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "BadRequest" | "Invalid" => StatusCode::BAD_REQUEST,
        "NotFound" | "UnknownExemplar" => StatusCode::NOT_FOUND,
        "Conflict" | "AlreadyExists" | "AlreadyExemplar" | "AlreadyInitialized"
        | "IterationQuotaExceeded" | "SessionClosed" | "IdempotencyKeyReused" => {
            StatusCode::CONFLICT
        }
        "Io" | "Corrupt" | "Internal" | "DataDirMissing" => StatusCode::INTERNAL_SERVER_ERROR,
        "Transport" | "RateLimited" | "ExhaustedRetries" | "AuthMissing" => StatusCode::BAD_GATEWAY,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> ApiError {
        ApiError {
            code: e.code(),
            message: e.to_string(),
            detail: e.detail(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(code = %self.code, "{}", self.message);
        }
        (status, Json(self)).into_response()
    }
}
