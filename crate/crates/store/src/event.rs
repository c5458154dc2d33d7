use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use relkit_core::lifecycle::TransitionEvent;
use relkit_core::orchestrator::RunReport;
use relkit_core::session::{Assignment, Phase, TestPlan};
use serde::{Deserialize, Serialize};

/// Domain events, in the order they were accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Event {
    SessionCreated {
        id: String,
        phase: Phase,
        plan: TestPlan,
        testers: BTreeSet<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        planned_days: Option<u32>,
    },
    AssignmentsMade {
        session_id: String,
        assignments: Vec<Assignment>,
    },
    Transitioned {
        session_id: String,
        result_id: String,
        event: TransitionEvent,
    },
    SessionClosed {
        session_id: String,
    },
    RunSubmitted {
        id: String,
        report: RunReport,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::SessionCreated { .. } => "SessionCreated",
            Self::AssignmentsMade { .. } => "AssignmentsMade",
            Self::Transitioned { .. } => "Transitioned",
            Self::SessionClosed { .. } => "SessionClosed",
            Self::RunSubmitted { .. } => "RunSubmitted",
        }
    }
}

/// One line of the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub event: Event,
}
