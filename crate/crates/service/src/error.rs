use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use crate::wire::{ErrorBody, SubmitResponse};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("no session with id {0}")]
    UnknownSession(String),
    #[error("session limit of {0} reached")]
    Capacity(usize),
    #[error("dataset has {points} points, limit is {limit}")]
    TooManyPoints { points: usize, limit: usize },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("session is optimizing")]
    Busy,
    #[error("no record was accepted")]
    NothingAccepted(SubmitResponse),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn code(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            ApiError::Capacity(_) => (StatusCode::SERVICE_UNAVAILABLE, "capacity"),
            ApiError::TooManyPoints { .. } => (StatusCode::PAYLOAD_TOO_LARGE, "too_many_points"),
            ApiError::Dataset(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_dataset"),
            ApiError::Params(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_params"),
            ApiError::Busy => (StatusCode::CONFLICT, "optimizing"),
            ApiError::NothingAccepted(_) => (StatusCode::CONFLICT, "nothing_accepted"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.code();
        if let ApiError::NothingAccepted(body) = self {
            // verdicts still matter to the client
            return (status, Json(body)).into_response();
        }
        let body = ErrorBody { error: code.to_string(), message: self.to_string() };
        (status, Json(body)).into_response()
    }
}
