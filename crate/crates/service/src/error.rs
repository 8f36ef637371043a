use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use prismatic_core::corrnet::CorrError;
use prismatic_core::knowledge::KnowledgeError;
use prismatic_core::mvclust::GmcError;
use prismatic_core::prism::PrismError;
use prismatic_core::session::SessionError;
use prismatic_core::store::StoreError;

/// Machine-readable error codes. Each maps to one HTTP status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    UnknownInstrument,
    UnknownItem,
    UnknownSession,
    EmptyYear,
    NoClusters,
    DuplicateMember,
    NotAMember,
    MustHaveProtected,
    DuplicateItem,
    NotPinned,
    ConflictingEvent,
    DuplicateSession,
    InvalidOrder,
    TooFewMembers,
    SeriesTooShort,
    MissingBenchmark,
    EmptyIndustry,
    InvalidParameter,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        use ErrorCode::*;
        match self {
            BadRequest | InvalidParameter => StatusCode::BAD_REQUEST,
            UnknownInstrument | UnknownItem | UnknownSession | EmptyYear | NoClusters => {
                StatusCode::NOT_FOUND
            }
            DuplicateMember | NotAMember | MustHaveProtected | DuplicateItem | NotPinned
            | ConflictingEvent | DuplicateSession => StatusCode::CONFLICT,
            InvalidOrder | TooFewMembers | SeriesTooShort | MissingBenchmark | EmptyIndustry => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = match &e {
            SessionError::UnknownInstrument(_) => ErrorCode::UnknownInstrument,
            SessionError::EmptyYear(_) => ErrorCode::EmptyYear,
            SessionError::DuplicateMember(_) => ErrorCode::DuplicateMember,
            SessionError::NotAMember(_) => ErrorCode::NotAMember,
            SessionError::MustHaveProtected(_) => ErrorCode::MustHaveProtected,
            SessionError::UnknownItem(_) => ErrorCode::UnknownItem,
            SessionError::DuplicateItem(_) => ErrorCode::DuplicateItem,
            SessionError::NotPinned(_) => ErrorCode::NotPinned,
            SessionError::InvalidOrder => ErrorCode::InvalidOrder,
            SessionError::TooFewMembers(_) => ErrorCode::TooFewMembers,
            SessionError::MissingCreate | SessionError::ConflictingEvent(_) => {
                ErrorCode::ConflictingEvent
            }
        };
        Self::new(code, e.to_string())
    }
}

impl From<PrismError> for ApiError {
    fn from(e: PrismError) -> Self {
        let code = match &e {
            PrismError::IndexOutOfRange { .. } | PrismError::InvalidCell { .. } => {
                ErrorCode::InvalidParameter
            }
            PrismError::SeriesTooShort { .. } => ErrorCode::SeriesTooShort,
            PrismError::MissingBenchmark => ErrorCode::MissingBenchmark,
            PrismError::EmptyIndustry(_) => ErrorCode::EmptyIndustry,
            PrismError::UnknownInstrument(_) => ErrorCode::UnknownInstrument,
            PrismError::Format(_) | PrismError::Io(_) => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

impl From<CorrError> for ApiError {
    fn from(e: CorrError) -> Self {
        let code = match &e {
            CorrError::EmptyYear(_) => ErrorCode::EmptyYear,
            CorrError::UnknownInstrument(_) => ErrorCode::UnknownInstrument,
            CorrError::LengthMismatch(..) => ErrorCode::InvalidParameter,
            CorrError::Format(_) | CorrError::Io(_) => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

impl From<KnowledgeError> for ApiError {
    fn from(e: KnowledgeError) -> Self {
        let code = match &e {
            KnowledgeError::UnknownInstrument(_) => ErrorCode::UnknownInstrument,
            KnowledgeError::UnknownItem(_) => ErrorCode::UnknownItem,
            KnowledgeError::InvalidItem(_) => ErrorCode::BadRequest,
        };
        Self::new(code, e.to_string())
    }
}

impl From<GmcError> for ApiError {
    fn from(e: GmcError) -> Self {
        let code = match &e {
            GmcError::UnknownInstrument(_) => ErrorCode::UnknownInstrument,
            GmcError::InvalidParameter(_)
            | GmcError::DegenerateView(_)
            | GmcError::EmptyView(_) => ErrorCode::InvalidParameter,
            GmcError::NumericalFailure => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let code = match &e {
            StoreError::MissingBenchmark(_) => ErrorCode::MissingBenchmark,
            _ => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}
