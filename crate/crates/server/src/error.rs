use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use marge_core::adventure::GameError;
use marge_core::proximity::ProximityError;
use marge_core::store::StoreError;
use serde::Serialize;

/// Error body sent to clients: `{"code": ..., "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct Body<'a> {
    code: &'a str,
    message: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "Unauthorized", message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "Forbidden", message)
    }

    pub fn not_implemented(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_IMPLEMENTED, "NotImplemented", message)
    }

    pub fn route_not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", "no such route")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Body {
            code: self.code,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

/// Status for each engine error. Keep in step with the README table.
pub fn game_status(e: &GameError) -> StatusCode {
    use GameError::*;
    match e {
        Validation(_) | UnknownLanguage(_) | WrongInputKind { .. } | IndexOutOfRange { .. } | EmptyFeedback
        | TooLong(_) | InvalidArgument(_) => StatusCode::BAD_REQUEST,
        UnknownAdventure(_) | UnknownSession(_) | UnknownUser(_) | UnknownEgg(_) => StatusCode::NOT_FOUND,
        UnavailableAdventure(_) | DuplicateUser(_) | SessionComplete | NotCompleted(_) | GateLocked
        | IncompleteQuiz { .. } | AlreadyAnswered(_) | NotAQuizStage => StatusCode::CONFLICT,
    }
}

impl From<GameError> for ApiError {
    fn from(e: GameError) -> Self {
        Self::new(game_status(&e), e.code(), e.to_string())
    }
}

impl From<ProximityError> for ApiError {
    fn from(e: ProximityError) -> Self {
        let (status, code) = match &e {
            ProximityError::OutOfOrderEvent { .. } => (StatusCode::CONFLICT, "OutOfOrderEvent"),
            ProximityError::InvalidRssi(_) => (StatusCode::BAD_REQUEST, "InvalidRssi"),
            ProximityError::UnknownBeacon(_) => (StatusCode::BAD_REQUEST, "UnknownBeacon"),
            ProximityError::EmptyWindow { .. } => (StatusCode::BAD_REQUEST, "EmptyWindow"),
            ProximityError::BadLogLine { .. } => (StatusCode::BAD_REQUEST, "InvalidBody"),
            ProximityError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "StorageError"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = match &e {
            StoreError::DuplicateLogin(_) => (StatusCode::CONFLICT, "DuplicateLogin"),
            StoreError::EmptyCredential => (StatusCode::BAD_REQUEST, "EmptyCredential"),
            StoreError::InvalidPath(..) => (StatusCode::BAD_REQUEST, "InvalidPath"),
            StoreError::NotFound(_) => (StatusCode::NOT_FOUND, "NotFound"),
            StoreError::TransformFailed(_) | StoreError::Io(_) | StoreError::Corrupt { .. } => {
                (StatusCode::INTERNAL_SERVER_ERROR, "StorageError")
            }
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        match r {
            JsonRejection::MissingJsonContentType(_) => Self::new(
                StatusCode::UNSUPPORTED_MEDIA_TYPE,
                "UnsupportedMediaType",
                "expected content-type application/json",
            ),
            other => Self::new(StatusCode::BAD_REQUEST, "InvalidBody", other.body_text()),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "InvalidArgument", r.body_text())
    }
}
