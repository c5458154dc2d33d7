use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use relkit_core::lifecycle::{CaseResult, TransitionRequest};
use relkit_core::orchestrator::RunReport;
use relkit_core::session::{AssignStrategy, Assignment, Phase, Session, SessionError, TestPlan};

use crate::event::Event;
use crate::log::{EventLog, OpenMode, StoreError};
use crate::snapshot::{DomainError, Snapshot, StoredRun};

type Clock = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// Serialized command handler over an event log.
///
/// Mutations queue on one writer lock; reads share the snapshot lock and
/// always observe a state at an event boundary.
pub struct Store {
    writer: Mutex<EventLog>,
    snapshot: RwLock<Snapshot>,
    clock: Clock,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("last_seq", &self.read(|s| s.last_seq)).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewSession {
    pub id: Option<String>,
    pub phase: Phase,
    pub plan: TestPlan,
    pub testers: BTreeSet<String>,
    pub planned_days: Option<u32>,
}

impl Store {
    pub fn open(path: &Path, mode: OpenMode) -> Result<Self, StoreError> {
        let (log, snapshot) = EventLog::open(path, mode)?;
        Ok(Self::from_parts(log, snapshot))
    }

    pub fn from_parts(log: EventLog, snapshot: Snapshot) -> Self {
        Self { writer: Mutex::new(log), snapshot: RwLock::new(snapshot), clock: Box::new(Utc::now) }
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn read<R>(&self, f: impl FnOnce(&Snapshot) -> R) -> R {
        f(&self.snapshot.read().expect("snapshot lock"))
    }

    pub fn snapshot(&self) -> Snapshot {
        self.read(Snapshot::clone)
    }

    /// Builds an event from the current state and appends it, holding the
    /// writer lock across both so no other mutation interleaves. `build` also
    /// returns a key that `after` uses to read the result back.
    fn mutate<K, T>(
        &self,
        build: impl FnOnce(&Snapshot, DateTime<Utc>) -> Result<(Option<Event>, K), DomainError>,
        after: impl FnOnce(&Snapshot, K) -> Result<T, DomainError>,
    ) -> Result<T, StoreError> {
        let mut log = self.writer.lock().expect("writer lock");
        let mut snap = self.snapshot.write().expect("snapshot lock");
        let at = (self.clock)();
        let (event, key) = build(&snap, at)?;
        if let Some(event) = event {
            log.append(&mut snap, event, at)?;
        }
        Ok(after(&snap, key)?)
    }

    pub fn create_session(&self, new: NewSession) -> Result<Session, StoreError> {
        self.mutate(
            |snap, _| {
                let id = match new.id {
                    Some(id) => id,
                    None => (snap.sessions.len() + 1..)
                        .map(|n| format!("s{n}"))
                        .find(|id| !snap.sessions.contains_key(id))
                        .expect("free id"),
                };
                let event = Event::SessionCreated {
                    id: id.clone(),
                    phase: new.phase,
                    plan: new.plan,
                    testers: new.testers,
                    planned_days: new.planned_days,
                };
                Ok((Some(event), id))
            },
            |snap, id| snap.session(&id).cloned(),
        )
    }

    pub fn assign(&self, session_id: &str, strategy: AssignStrategy) -> Result<Vec<Assignment>, StoreError> {
        self.mutate(
            |snap, _| {
                let s = snap.session(session_id)?;
                if s.is_closed() {
                    return Err(SessionError::SessionClosed.into());
                }
                let planned = s.plan_assignments(strategy);
                let event = (!planned.is_empty())
                    .then(|| Event::AssignmentsMade { session_id: session_id.into(), assignments: planned.clone() });
                Ok((event, planned))
            },
            |_, planned| Ok(planned),
        )
    }

    pub fn reassign(&self, result_id: &str, tester: &str) -> Result<CaseResult, StoreError> {
        self.mutate(
            |snap, _| {
                let s = snap.session_of_result(result_id)?;
                let a = Assignment { result_id: result_id.into(), tester: tester.into() };
                s.check_assignment(&a)?;
                Ok((Some(Event::AssignmentsMade { session_id: s.id.clone(), assignments: vec![a] }), ()))
            },
            |snap, ()| snap.result(result_id).cloned(),
        )
    }

    pub fn transition(&self, result_id: &str, req: &TransitionRequest) -> Result<CaseResult, StoreError> {
        self.mutate(
            |snap, at| {
                let s = snap.session_of_result(result_id)?;
                let event = s.check_transition(result_id, req, at)?;
                Ok((Some(Event::Transitioned { session_id: s.id.clone(), result_id: result_id.into(), event }), ()))
            },
            |snap, ()| snap.result(result_id).cloned(),
        )
    }

    pub fn close_session(&self, session_id: &str) -> Result<Session, StoreError> {
        self.mutate(
            |snap, at| {
                let mut s = snap.session(session_id)?.clone();
                s.close(at)?;
                Ok((Some(Event::SessionClosed { session_id: session_id.into() }), ()))
            },
            |snap, ()| snap.session(session_id).cloned(),
        )
    }

    pub fn submit_run(&self, report: RunReport) -> Result<StoredRun, StoreError> {
        self.mutate(
            |snap, _| {
                let id = (snap.runs.len() + 1..)
                    .map(|n| format!("r{n}"))
                    .find(|id| snap.run(id).is_none())
                    .expect("free id");
                Ok((Some(Event::RunSubmitted { id: id.clone(), report }), id))
            },
            |snap, id| Ok(snap.run(&id).cloned().expect("just stored")),
        )
    }
}
