use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use commentscope_core::Error;
use serde::{Deserialize, Serialize};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status: status.as_u16(), code: code.into(), message: message.into() }
    }

    pub fn not_computed(what: &str) -> Self {
        Self::new(StatusCode::CONFLICT, "not_computed", format!("{what} has not been computed for this snapshot"))
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_argument", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::VideoNotFound(_) => Self::new(StatusCode::NOT_FOUND, "video_not_found", msg),
            Error::SnapshotNotFound(_) => Self::new(StatusCode::NOT_FOUND, "snapshot_not_found", msg),
            Error::NoSnapshot => Self::new(StatusCode::CONFLICT, "no_snapshot", msg),
            Error::InvalidPage(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_page", msg),
            Error::InvalidArgument(_) => Self::bad_request(msg),
            other => {
                tracing::error!(error = %other, "request failed");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}
