use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use crate::gameplay::GameError;
use shieldup_core::analysis::AnalysisError;
use shieldup_core::engine::EngineError;
use shieldup_core::sdat::SdatError;
use shieldup_core::trial::TrialError;

/// An error response: `{"error": class, "message": text}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub class: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, class: &'static str, message: impl Into<String>) -> Self {
        Self { status, class, message: message.into() }
    }

    pub fn bad_request(class: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, class, message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or unknown bearer token")
    }

    pub fn forbidden(class: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, class, message)
    }

    pub fn not_found(class: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, class, message)
    }

    pub fn conflict(class: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, class, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.class, "message": self.message}))).into_response()
    }
}

impl From<TrialError> for ApiError {
    fn from(e: TrialError) -> Self {
        let message = e.to_string();
        match e {
            TrialError::InvalidDemographics(_) => Self::bad_request("InvalidDemographics", message),
            TrialError::UnknownParticipant(_) => Self::not_found("UnknownParticipant", message),
            TrialError::OutOfOrder { .. } => Self::conflict("OutOfOrder", message),
            TrialError::FollowupTooEarly { .. } => Self::conflict("FollowupTooEarly", message),
            TrialError::FollowupWindowClosed { .. } => Self::conflict("FollowupWindowClosed", message),
            TrialError::WrongForm { .. } => Self::conflict("WrongForm", message),
            TrialError::AlreadyAssigned(_) => Self::conflict("AlreadyAssigned", message),
            TrialError::NotAssigned(_) => Self::conflict("NotAssigned", message),
            TrialError::MissingSdat(_) => Self::bad_request("MissingResponse", message),
            TrialError::UnexpectedSdat(_) => Self::bad_request("UnexpectedSdat", message),
            TrialError::InvalidTimes(_) => Self::bad_request("InvalidTimes", message),
            _ => Self::internal(message),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match e {
            EngineError::LevelLocked { .. } => Self::new(StatusCode::LOCKED, "LevelLocked", message),
            EngineError::InvalidChoice { .. } => Self::conflict("InvalidChoice", message),
            EngineError::SessionCompleted => Self::conflict("SessionCompleted", message),
            EngineError::NotCompleted => Self::conflict("NotCompleted", message),
            EngineError::QuizAlreadyGraded => Self::conflict("QuizAlreadyGraded", message),
            EngineError::LengthMismatch { .. } => Self::bad_request("LengthMismatch", message),
            _ => Self::internal(message),
        }
    }
}

impl From<SdatError> for ApiError {
    fn from(e: SdatError) -> Self {
        let class = match e {
            SdatError::MissingResponse(_) => "MissingResponse",
            SdatError::DuplicateResponse(_) => "DuplicateResponse",
            _ => "InvalidResponse",
        };
        Self::bad_request(class, e.to_string())
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "AnalysisFailed", e.to_string())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(format!("storage: {e}"))
    }
}

impl From<GameError> for ApiError {
    fn from(e: GameError) -> Self {
        let message = e.to_string();
        match e {
            GameError::Engine(inner) => inner.into(),
            GameError::UnknownScenario(_) => Self::not_found("UnknownScenario", message),
            GameError::UnknownSession(_) => Self::not_found("UnknownSession", message),
            GameError::AlreadyCompleted(_) => Self::conflict("ScenarioCompleted", message),
            GameError::ScoreMismatch { .. } => Self::internal(message),
        }
    }
}
