use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fieldbot_core::mission_control::MissionError;
use fieldbot_core::simrunner::ScenarioError;
use serde_json::json;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<MissionError> for ApiError {
    fn from(e: MissionError) -> Self {
        let status = match e {
            MissionError::NotFound(_) => StatusCode::NOT_FOUND,
            MissionError::BadStatus { .. } | MissionError::NotManual => StatusCode::CONFLICT,
            MissionError::EmptyPlan
            | MissionError::Geo(_)
            | MissionError::Plan(_)
            | MissionError::Params(_) => StatusCode::UNPROCESSABLE_ENTITY,
            MissionError::BadLog { .. } | MissionError::Io(_) | MissionError::Json(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        Self::new(status, e.to_string())
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Mission(m) => m.into(),
            ScenarioError::Io(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            _ => Self::invalid(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}
