//! JSON error bodies: `{"error": {"kind", "message", "fields"?}}`.

use std::collections::BTreeMap;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cadence_render::archive::ArchiveError;
use cadence_render::{RunError, SubmitError};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                kind,
                message: message.into(),
                fields: BTreeMap::new(),
            },
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn field(field: &str, message: impl Into<String>) -> Self {
        let message = message.into();
        let mut e = Self::bad_request(format!("{field}: {message}"));
        e.body.fields.insert(field.to_string(), message);
        e
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "invalid or expired session token")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.body }))).into_response()
    }
}

/// Maps a body deserialization error to a 400 naming the offending field
/// when serde reports one.
pub fn from_body_error(e: serde_json::Error) -> ApiError {
    let msg = e.to_string();
    let names_field = msg.starts_with("unknown field") || msg.starts_with("missing field");
    match msg.split('`').nth(1).filter(|_| names_field) {
        Some(f) => ApiError::field(f, msg.clone()),
        None => ApiError::bad_request(format!("malformed body: {msg}")),
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::Invalid { field, message } => ApiError::field(field, message),
            SubmitError::Consent(inner) => ApiError::new(StatusCode::FORBIDDEN, "consent_required", inner.to_string()),
            SubmitError::Duplicate(id) => ApiError::conflict(format!("job {id} already exists")),
            SubmitError::Store(s) => ApiError::internal(s.to_string()),
        }
    }
}

impl From<RunError> for ApiError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::NotFound(id) => ApiError::not_found(format!("job {id} not found")),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<ArchiveError> for ApiError {
    fn from(e: ArchiveError) -> Self {
        match e {
            ArchiveError::NotFound(id) => ApiError::not_found(format!("session {id} not found")),
            ArchiveError::Consent { .. } => ApiError::new(StatusCode::FORBIDDEN, "consent_required", e.to_string()),
            ArchiveError::Rejected { .. } => ApiError::conflict(e.to_string()),
            ArchiveError::Store(s) => ApiError::internal(s.to_string()),
        }
    }
}
