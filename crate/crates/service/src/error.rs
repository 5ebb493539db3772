use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use modeladapt_core::interpret::PlanError;
use modeladapt_core::storage::StorageError;

/// Error body: `{code, message, location}`.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub location: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                location: None,
            },
        }
    }

    pub fn at(mut self, location: impl Into<String>) -> Self {
        self.body.location = Some(location.into());
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", message)
    }

    /// Storage errors; rights failures are 401 for anonymous clients.
    pub fn storage(err: StorageError, anonymous: bool) -> Self {
        match err {
            StorageError::Constraint {
                kind,
                location,
                message,
            } => Self::new(StatusCode::CONFLICT, &format!("constraint.{kind}"), message).at(location),
            StorageError::Rights { location, message } if anonymous => {
                Self::unauthorized(format!("{message}; authentication required")).at(location)
            }
            StorageError::Rights { location, message } => {
                Self::new(StatusCode::FORBIDDEN, "forbidden", message).at(location)
            }
            StorageError::NotFound(what) => Self::not_found(format!("{what} not found")),
            StorageError::InvalidValue { location, message } => {
                Self::new(StatusCode::BAD_REQUEST, "invalid_value", message).at(location)
            }
            StorageError::Plan(m) => Self::new(StatusCode::BAD_REQUEST, "invalid_plan", m),
            other => {
                tracing::error!(error = %other, "storage failure");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string())
            }
        }
    }
}

impl From<PlanError> for ApiError {
    fn from(err: PlanError) -> Self {
        match err {
            PlanError::TableNotVisible(t) => Self::not_found(format!("table {t} not found")).at(t.to_string()),
            PlanError::InvalidContext(c) => Self::bad_request(format!("invalid context {c:?}")),
            PlanError::Invalid(m) => Self::bad_request(m),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
