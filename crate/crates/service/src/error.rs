use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use atlas_core::Error;

pub const VERSION_HEADER: &str = "x-snapshot-version";

/// JSON error body: `{"snapshot_version", "error": {"kind", "message",
/// "retryable", "upstream_status"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
    pub retryable: bool,
    pub upstream_status: Option<u16>,
    pub version: u64,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, message: impl Into<String>, version: u64) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
            retryable: false,
            upstream_status: None,
            version,
        }
    }

    pub fn bad_request(message: impl Into<String>, version: u64) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message, version)
    }

    pub fn not_found(message: impl Into<String>, version: u64) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message, version)
    }

    pub fn from_core(e: Error, version: u64) -> Self {
        match e {
            Error::Param(_) | Error::Invalid(_) | Error::Parse { .. } | Error::DuplicateId(_) => {
                Self::bad_request(e.to_string(), version)
            }
            Error::NotFound(_) => Self::not_found(e.to_string(), version),
            Error::Backend {
                status,
                retryable,
                ref message,
            } => {
                let code = match (status, retryable) {
                    (Some(504), _) => StatusCode::GATEWAY_TIMEOUT,
                    (_, true) => StatusCode::SERVICE_UNAVAILABLE,
                    _ => StatusCode::BAD_GATEWAY,
                };
                Self {
                    status: code,
                    kind: "backend",
                    message: message.clone(),
                    retryable,
                    upstream_status: status,
                    version,
                }
            }
            Error::Io { .. } | Error::Format(_) => {
                tracing::error!(error = %e, "internal error");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), version)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "snapshot_version": self.version,
            "error": {
                "kind": self.kind,
                "message": self.message,
                "retryable": self.retryable,
                "upstream_status": self.upstream_status,
            }
        });
        let mut resp = (self.status, Json(body)).into_response();
        resp.headers_mut()
            .insert(VERSION_HEADER, HeaderValue::from(self.version));
        resp
    }
}
