//! Error codes and their HTTP statuses.

use axum::http::StatusCode;
use gridops_core::{ConfigError, EngineError};
use gridops_workflow::{AlarmError, DeskError, TicketError, TopologyError};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    #[serde(rename = "error")]
    pub code: String,
    pub message: String,
    /// Generation time of content that is being withheld as outdated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
}

/// Every error code the service can return, with its status.
pub const STATUS_BY_CODE: &[(&str, u16)] = &[
    ("UNAUTHENTICATED", 401),
    ("FORBIDDEN", 403),
    ("NOT_FOUND", 404),
    ("VIEW_NOT_FOUND", 404),
    ("ALARM_NOT_FOUND", 404),
    ("MASTER_NOT_FOUND", 404),
    ("TICKET_NOT_FOUND", 404),
    ("SITE_NOT_FOUND", 404),
    ("ILLEGAL_TRANSITION", 409),
    ("MASK_CYCLE", 409),
    ("MASTER_CLOSED", 409),
    ("CROSS_SITE_MASK", 409),
    ("ALARM_NOT_LINKABLE", 409),
    ("MAX_ESCALATION_REACHED", 409),
    ("TICKET_CLOSED", 409),
    ("VALIDATION_FAILED", 422),
    ("IMMUTABLE_FIELD", 422),
    ("INVALID_CHANGE", 422),
    ("CONFIG_INVALID", 422),
    ("CYCLE_DETECTED", 422),
    ("CONTACT_MISSING", 422),
    ("TOPOLOGY_MALFORMED", 422),
    ("VIEW_SUSPENDED", 503),
    ("CONTENT_OUTDATED", 503),
    ("VIEW_EMPTY", 503),
    ("BAD_REQUEST", 400),
    ("QUERY_PARSE_ERROR", 400),
    ("SOURCE_UNREACHABLE", 502),
    ("SOURCE_MALFORMED", 502),
    ("TIMEOUT", 504),
    ("CACHE_WRITE", 500),
    ("TEMPLATE_ERROR", 500),
    ("OUTBOX_WRITE_FAILED", 500),
    ("INTERNAL", 500),
];

pub fn status_for(code: &str) -> StatusCode {
    STATUS_BY_CODE
        .iter()
        .find(|(c, _)| *c == code)
        .and_then(|(_, s)| StatusCode::from_u16(*s).ok())
        .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status_for(code),
            code: code.to_string(),
            message: message.into(),
            generated_at: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("BAD_REQUEST", message)
    }

    pub fn unauthenticated(message: impl Into<String>) -> Self {
        Self::new("UNAUTHENTICATED", message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new("FORBIDDEN", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new("INTERNAL", message)
    }
}

/// Messages already start with their code; keep only the text after it.
fn strip_code(code: &str, message: String) -> String {
    message
        .strip_prefix(code)
        .and_then(|m| m.strip_prefix(": "))
        .map(str::to_string)
        .unwrap_or(message)
}

macro_rules! from_coded {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(e: $t) -> Self {
                let code = e.code();
                Self::new(code, strip_code(code, e.to_string()))
            }
        }
    )*};
}

from_coded!(EngineError, ConfigError, DeskError, AlarmError, TicketError, TopologyError);

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn mapping_is_a_function() {
        let codes: BTreeSet<&str> = STATUS_BY_CODE.iter().map(|(c, _)| *c).collect();
        assert_eq!(codes.len(), STATUS_BY_CODE.len(), "a code is listed twice");
        assert_eq!(status_for("VIEW_SUSPENDED"), StatusCode::SERVICE_UNAVAILABLE);
        assert_eq!(status_for("ILLEGAL_TRANSITION"), StatusCode::CONFLICT);
        assert_eq!(status_for("QUERY_PARSE_ERROR"), StatusCode::BAD_REQUEST);
    }

    #[test]
    fn module_errors_keep_their_code() {
        let e: ApiError = EngineError::ViewNotFound("x".into()).into();
        assert_eq!((e.status, e.code.as_str(), e.message.as_str()), (StatusCode::NOT_FOUND, "VIEW_NOT_FOUND", "no view named `x`"));
        let e: ApiError = AlarmError::AlarmNotFound(7).into();
        assert_eq!(e.status, StatusCode::NOT_FOUND);
    }
}
