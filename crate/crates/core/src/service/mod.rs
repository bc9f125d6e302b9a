//! The six-phase workflow as a session state machine, and its HTTP surface.

mod http;
mod session;

use serde::Serialize;
use thiserror::Error;

pub use http::{router, serve, AppState, ServiceConfig, ENDPOINTS};
pub use session::{
    rank_grounded, ContextSelector, DeployRequest, Deployment, Phase, Session, SessionView, SolutionsView, DEFAULT_RECORDS,
    SESSION_TTL,
};

use crate::advisor::{AdviceError, GapReport};
use crate::context::ContextError;
use crate::cost::CostError;
use crate::kb::KbError;
use crate::planner::{GroundError, PlanError};
use crate::qa::QaError;
use crate::runtime::{GenerateError, RunError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{action} is not allowed in phase {phase}: {needed}")]
    Phase { action: &'static str, phase: &'static str, needed: &'static str },
    #[error(transparent)]
    Qa(#[from] QaError),
    #[error("unknown solution {0:?}")]
    UnknownSolution(String),
    #[error("no solution for task {task}")]
    NoSolution { task: String, report: GapReport },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Advice(#[from] AdviceError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("unknown {kind} {id:?}")]
    NotFound { kind: &'static str, id: String },
    #[error("invalid request: {0}")]
    BadRequest(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Phase { .. } => "phase-violation",
            ServiceError::Qa(QaError::EmptyCatalog) => "empty-catalog",
            ServiceError::Qa(QaError::UnknownQuestion(_)) => "unknown-question",
            ServiceError::Qa(QaError::AlreadyAnswered(_)) => "already-answered",
            ServiceError::Qa(QaError::IllegalChoice { .. }) => "illegal-choice",
            ServiceError::Qa(QaError::NotInFilteredSet(_)) => "not-in-filtered-set",
            ServiceError::UnknownSolution(_) => "unknown-solution",
            ServiceError::NoSolution { .. } => "no-solution",
            ServiceError::Cost(CostError::EmptyCandidateSet) => "empty-candidate-set",
            ServiceError::Cost(CostError::InvalidPriorities(_)) => "invalid-priorities",
            ServiceError::Context(_) => "offer-mismatch",
            ServiceError::Ground(_) => "grounding-failed",
            ServiceError::Generate(_) => "generate-failed",
            ServiceError::Run(_) => "invalid-pipeline",
            ServiceError::Plan(_) => "invalid-options",
            ServiceError::Advice(_) => "advice-failed",
            ServiceError::Kb(KbError::Parse { .. }) => "kb-parse",
            ServiceError::Kb(KbError::Ref { .. }) => "kb-unknown-reference",
            ServiceError::Kb(KbError::Dup { .. }) => "duplicate",
            ServiceError::Kb(KbError::Invalid { .. }) => "kb-invalid-record",
            ServiceError::Kb(KbError::Io { .. }) => "kb-io",
            ServiceError::NotFound { .. } => "not-found",
            ServiceError::BadRequest(_) => "bad-request",
        }
    }

    /// HTTP status for this error.
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::NotFound { .. } => 404,
            ServiceError::Kb(KbError::Dup { .. }) => 409,
            ServiceError::NoSolution { .. } => 422,
            ServiceError::Kb(KbError::Io { .. }) | ServiceError::Advice(_) => 500,
            _ => 400,
        }
    }

    /// Identifier of the offending question, task, solution or record.
    pub fn offender(&self) -> Option<String> {
        match self {
            ServiceError::Qa(QaError::EmptyCatalog) => None,
            ServiceError::Qa(QaError::UnknownQuestion(id) | QaError::AlreadyAnswered(id) | QaError::NotInFilteredSet(id)) => {
                Some(id.clone())
            }
            ServiceError::Qa(QaError::IllegalChoice { question, .. }) => Some(question.clone()),
            ServiceError::UnknownSolution(id) => Some(id.clone()),
            ServiceError::NoSolution { task, .. } => Some(task.clone()),
            ServiceError::Context(ContextError::OfferMismatch { sensor, property }) => Some(format!("{sensor}.{property}")),
            ServiceError::Ground(GroundError::NoSensorForSlot(p)) => Some(p.name.clone()),
            ServiceError::Generate(GenerateError::ProjectionUnreachable(f) | GenerateError::UnknownRef(f) | GenerateError::DuplicateField(f)) => {
                Some(f.clone())
            }
            ServiceError::Kb(e) => e.offender().map(str::to_string),
            ServiceError::NotFound { id, .. } => Some(id.clone()),
            ServiceError::Phase { action, .. } => Some(action.to_string()),
            _ => None,
        }
    }

    pub fn body(&self) -> ErrorEnvelope {
        ErrorEnvelope {
            error: ErrorDetail { code: self.code(), message: self.to_string(), id: self.offender() },
            gap_report: match self {
                ServiceError::NoSolution { report, .. } => Some(report.clone()),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorDetail {
    pub code: &'static str,
    pub message: String,
    pub id: Option<String>,
}

/// JSON error body of every failing endpoint.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ErrorEnvelope {
    pub error: ErrorDetail,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_report: Option<GapReport>,
}
