use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use relkit_core::lifecycle::{CaseResult, LifecycleError, TransitionRequest};
use relkit_core::orchestrator::{RunReport, REPORT_SCHEMA};
use relkit_core::session::{create_session, Session, SessionError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, Record};

/// Why the domain refused an event.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum DomainError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("session `{0}` already exists")]
    DuplicateSession(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("run `{0}` already exists")]
    DuplicateRun(String),
    #[error("invalid id `{0}`: use letters, digits, `_`, `.` or `-`")]
    InvalidId(String),
    #[error("invalid run report: {0}")]
    InvalidReport(String),
}

impl DomainError {
    pub fn lifecycle(&self) -> Option<&LifecycleError> {
        match self {
            Self::Session(SessionError::Lifecycle(e)) => Some(e),
            _ => None,
        }
    }
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRun {
    pub id: String,
    pub submitted_at: DateTime<Utc>,
    pub report: RunReport,
}

/// State materialized from the log up to `last_seq`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Snapshot {
    pub last_seq: u64,
    pub sessions: BTreeMap<String, Session>,
    pub runs: Vec<StoredRun>,
}

/// The validated effect of one event, ready to commit.
#[derive(Debug)]
pub(crate) enum Change {
    Session(Box<Session>),
    Run(Box<StoredRun>),
}

impl Snapshot {
    pub fn session(&self, id: &str) -> Result<&Session, DomainError> {
        self.sessions.get(id).ok_or_else(|| DomainError::UnknownSession(id.to_owned()))
    }

    /// The session owning `result_id`. Result ids are `{session}-{n}`.
    pub fn session_of_result(&self, result_id: &str) -> Result<&Session, DomainError> {
        result_id
            .rsplit_once('-')
            .and_then(|(sid, _)| self.sessions.get(sid))
            .filter(|s| s.results.iter().any(|r| r.id == result_id))
            .ok_or_else(|| DomainError::Session(SessionError::UnknownResult(result_id.to_owned())))
    }

    pub fn result(&self, result_id: &str) -> Result<&CaseResult, DomainError> {
        Ok(self.session_of_result(result_id)?.result(result_id)?)
    }

    pub fn run(&self, id: &str) -> Option<&StoredRun> {
        self.runs.iter().find(|r| r.id == id)
    }

    fn owned_session(&self, id: &str) -> Result<Session, DomainError> {
        self.session(id).cloned()
    }

    /// Validates `record` against the current state without changing it.
    pub(crate) fn stage(&self, record: &Record) -> Result<Change, DomainError> {
        match &record.event {
            Event::SessionCreated { id, phase, plan, testers, planned_days } => {
                if !valid_id(id) {
                    return Err(DomainError::InvalidId(id.clone()));
                }
                if self.sessions.contains_key(id) {
                    return Err(DomainError::DuplicateSession(id.clone()));
                }
                let mut s = create_session(id, *phase, plan.clone(), testers.clone(), record.at)?;
                s.planned_days = *planned_days;
                Ok(Change::Session(Box::new(s)))
            }
            Event::AssignmentsMade { session_id, assignments } => {
                let mut s = self.owned_session(session_id)?;
                for a in assignments {
                    s.apply_assignment(a)?;
                }
                Ok(Change::Session(Box::new(s)))
            }
            Event::Transitioned { session_id, result_id, event } => {
                let mut s = self.owned_session(session_id)?;
                let req = TransitionRequest {
                    expected_from: event.from,
                    to: event.to,
                    role: event.role,
                    actor: event.actor.clone(),
                    note: event.note.clone(),
                    issue_ref: event.issue_ref.clone(),
                };
                s.transition(result_id, &req, event.at)?;
                Ok(Change::Session(Box::new(s)))
            }
            Event::SessionClosed { session_id } => {
                let mut s = self.owned_session(session_id)?;
                s.close(record.at)?;
                Ok(Change::Session(Box::new(s)))
            }
            Event::RunSubmitted { id, report } => {
                if !valid_id(id) {
                    return Err(DomainError::InvalidId(id.clone()));
                }
                if self.run(id).is_some() {
                    return Err(DomainError::DuplicateRun(id.clone()));
                }
                if report.schema != REPORT_SCHEMA {
                    return Err(DomainError::InvalidReport(format!("unsupported schema `{}`", report.schema)));
                }
                if !report.totals_consistent() {
                    return Err(DomainError::InvalidReport("totals do not match the results".into()));
                }
                Ok(Change::Run(Box::new(StoredRun { id: id.clone(), submitted_at: record.at, report: report.clone() })))
            }
        }
    }

    pub(crate) fn commit(&mut self, seq: u64, change: Change) {
        match change {
            Change::Session(s) => {
                self.sessions.insert(s.id.clone(), *s);
            }
            Change::Run(r) => self.runs.push(*r),
        }
        self.last_seq = seq;
    }

    /// Applies one record; the snapshot is unchanged on error.
    pub fn apply(&mut self, record: &Record) -> Result<(), DomainError> {
        let change = self.stage(record)?;
        self.commit(record.seq, change);
        Ok(())
    }
}
