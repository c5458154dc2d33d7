//! Phased manual test sessions: creation under phase constraints,
//! assignment, progress, blind spots, meeting digests, and release
//! classification.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lifecycle::{CaseResult, CaseState, Configuration, LifecycleError, TestCase, TransitionEvent, TransitionRequest};

/// Pretesting and Final Testing each allow at most this many testers.
pub const SMALL_PHASE_MAX_TESTERS: usize = 2;
pub const PRETESTING_MAX_OS: usize = 2;
/// Release Testing beyond this many configurations is flagged, not refused.
pub const RELEASE_TESTING_CONFIG_GUIDANCE: usize = 10;
/// A tester is a workload outlier above `mean * OUTLIER_FACTOR` open entries.
pub const OUTLIER_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Pretesting,
    ReleaseTesting,
    FinalTesting,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pretesting => "Pretesting",
            Self::ReleaseTesting => "Release Testing",
            Self::FinalTesting => "Final Testing",
        })
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(char::is_ascii_alphanumeric).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "pretesting" | "pre" => Ok(Self::Pretesting),
            "releasetesting" | "release" => Ok(Self::ReleaseTesting),
            "finaltesting" | "final" => Ok(Self::FinalTesting),
            _ => Err(format!("unknown phase `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanEntry {
    pub case_id: String,
    pub configuration: Configuration,
}

/// A test plan with the catalog of the cases it references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestPlan {
    pub name: String,
    pub cases: Vec<TestCase>,
    pub entries: Vec<PlanEntry>,
}

impl TestPlan {
    /// Every case crossed with every configuration.
    pub fn matrix(name: &str, cases: Vec<TestCase>, configurations: &[Configuration]) -> Self {
        let entries = cases
            .iter()
            .flat_map(|c| {
                configurations
                    .iter()
                    .map(|cfg| PlanEntry { case_id: c.id.clone(), configuration: cfg.clone() })
            })
            .collect();
        Self { name: name.into(), cases, entries }
    }

    pub fn case(&self, id: &str) -> Option<&TestCase> {
        self.cases.iter().find(|c| c.id == id)
    }

    pub fn configurations(&self) -> BTreeSet<&Configuration> {
        self.entries.iter().map(|e| &e.configuration).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum SessionError {
    #[error("phase constraint violated: {0}")]
    PhaseConstraintViolation(String),
    #[error("the test plan has no entries")]
    EmptyPlan,
    #[error("a session needs at least one tester")]
    NoTesters,
    #[error("plan entry {case_id} on {configuration} is listed twice")]
    DuplicateEntry { case_id: String, configuration: String },
    #[error("plan entry references unknown case `{0}`")]
    UnknownCase(String),
    #[error("unknown tester `{0}`")]
    UnknownTester(String),
    #[error("unknown result `{0}`")]
    UnknownResult(String),
    #[error("result `{0}` is already in a final state")]
    EntryAlreadyFinal(String),
    #[error("session is incomplete: {open} results are not final")]
    SessionIncomplete { open: usize },
    #[error("session is closed")]
    SessionClosed,
    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(String),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub phase: Phase,
    pub plan: TestPlan,
    pub testers: BTreeSet<String>,
    /// One result per plan entry, in plan order.
    pub results: Vec<CaseResult>,
    pub opened_at: DateTime<Utc>,
    pub closed_at: Option<DateTime<Utc>>,
    /// Planned length in days; informational only.
    #[serde(default)]
    pub planned_days: Option<u32>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub notes: String,
}

/// Checks the plan and phase rules; returns the warnings a valid session carries.
pub fn check_session_rules(phase: Phase, plan: &TestPlan, testers: &BTreeSet<String>) -> Result<Vec<String>, SessionError> {
    if plan.entries.is_empty() {
        return Err(SessionError::EmptyPlan);
    }
    if testers.is_empty() || testers.iter().any(|t| t.trim().is_empty()) {
        return Err(SessionError::NoTesters);
    }
    let mut seen = HashSet::new();
    for entry in &plan.entries {
        if plan.case(&entry.case_id).is_none() {
            return Err(SessionError::UnknownCase(entry.case_id.clone()));
        }
        if !seen.insert(entry) {
            return Err(SessionError::DuplicateEntry {
                case_id: entry.case_id.clone(),
                configuration: entry.configuration.to_string(),
            });
        }
    }
    let mut warnings = Vec::new();
    match phase {
        Phase::Pretesting => {
            let os: BTreeSet<&str> = plan.entries.iter().map(|e| e.configuration.os.as_str()).collect();
            if os.len() > PRETESTING_MAX_OS {
                return Err(SessionError::PhaseConstraintViolation(format!(
                    "Pretesting covers at most {PRETESTING_MAX_OS} operating systems, plan has {}",
                    os.len()
                )));
            }
            if testers.len() > SMALL_PHASE_MAX_TESTERS {
                return Err(SessionError::PhaseConstraintViolation(format!(
                    "Pretesting uses at most {SMALL_PHASE_MAX_TESTERS} testers, got {}",
                    testers.len()
                )));
            }
        }
        Phase::FinalTesting => {
            if testers.len() > SMALL_PHASE_MAX_TESTERS {
                return Err(SessionError::PhaseConstraintViolation(format!(
                    "Final Testing uses at most {SMALL_PHASE_MAX_TESTERS} testers, got {}",
                    testers.len()
                )));
            }
            if let Some(entry) = plan.entries.iter().find(|e| plan.case(&e.case_id).is_some_and(|c| !c.basic)) {
                return Err(SessionError::PhaseConstraintViolation(format!(
                    "Final Testing covers basic cases only, `{}` is not basic",
                    entry.case_id
                )));
            }
        }
        Phase::ReleaseTesting => {
            let configs = plan.configurations().len();
            if configs > RELEASE_TESTING_CONFIG_GUIDANCE {
                warnings.push(format!(
                    "{configs} configurations planned; Release Testing usually covers up to {RELEASE_TESTING_CONFIG_GUIDANCE}"
                ));
            }
        }
    }
    Ok(warnings)
}

pub fn create_session(
    id: &str,
    phase: Phase,
    plan: TestPlan,
    testers: BTreeSet<String>,
    opened_at: DateTime<Utc>,
) -> Result<Session, SessionError> {
    let warnings = check_session_rules(phase, &plan, &testers)?;
    let results = plan
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| CaseResult::new(format!("{id}-{}", i + 1), &e.case_id, e.configuration.clone()))
        .collect();
    Ok(Session {
        id: id.to_owned(),
        phase,
        plan,
        testers,
        results,
        opened_at,
        closed_at: None,
        planned_days: None,
        warnings,
        notes: String::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AssignStrategy {
    #[default]
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub result_id: String,
    pub tester: String,
}

impl Session {
    pub fn is_closed(&self) -> bool {
        self.closed_at.is_some()
    }

    pub fn result(&self, result_id: &str) -> Result<&CaseResult, SessionError> {
        self.results
            .iter()
            .find(|r| r.id == result_id)
            .ok_or_else(|| SessionError::UnknownResult(result_id.to_owned()))
    }

    fn result_mut(&mut self, result_id: &str) -> Result<&mut CaseResult, SessionError> {
        self.results
            .iter_mut()
            .find(|r| r.id == result_id)
            .ok_or_else(|| SessionError::UnknownResult(result_id.to_owned()))
    }

    pub fn open_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.testers.iter().map(|t| (t.clone(), 0)).collect();
        for r in self.results.iter().filter(|r| !r.state.is_final()) {
            if let Some(t) = &r.assignee {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
        counts
    }

    /// Assignments that would distribute every unassigned open entry to the
    /// tester with the fewest open entries (ties break by tester name).
    pub fn plan_assignments(&self, _strategy: AssignStrategy) -> Vec<Assignment> {
        let mut counts = self.open_counts();
        let mut out = Vec::new();
        for r in self.results.iter().filter(|r| r.assignee.is_none() && !r.state.is_final()) {
            let Some((tester, count)) = counts
                .iter_mut()
                .filter(|(t, _)| self.testers.contains(*t))
                .min_by_key(|(t, c)| (**c, (*t).clone()))
            else {
                break;
            };
            *count += 1;
            out.push(Assignment { result_id: r.id.clone(), tester: tester.clone() });
        }
        out
    }

    pub fn assign(&mut self, strategy: AssignStrategy) -> Result<Vec<Assignment>, SessionError> {
        if self.is_closed() {
            return Err(SessionError::SessionClosed);
        }
        let planned = self.plan_assignments(strategy);
        for a in &planned {
            self.apply_assignment(a)?;
        }
        Ok(planned)
    }

    pub fn check_assignment(&self, assignment: &Assignment) -> Result<(), SessionError> {
        if self.is_closed() {
            return Err(SessionError::SessionClosed);
        }
        if !self.testers.contains(&assignment.tester) {
            return Err(SessionError::UnknownTester(assignment.tester.clone()));
        }
        let result = self.result(&assignment.result_id)?;
        if result.state.is_final() {
            return Err(SessionError::EntryAlreadyFinal(assignment.result_id.clone()));
        }
        Ok(())
    }

    pub fn apply_assignment(&mut self, assignment: &Assignment) -> Result<(), SessionError> {
        self.check_assignment(assignment)?;
        self.result_mut(&assignment.result_id)?.assignee = Some(assignment.tester.clone());
        Ok(())
    }

    pub fn reassign(&mut self, result_id: &str, tester: &str) -> Result<(), SessionError> {
        self.apply_assignment(&Assignment { result_id: result_id.into(), tester: tester.into() })
    }

    pub fn check_transition(
        &self,
        result_id: &str,
        req: &TransitionRequest,
        at: DateTime<Utc>,
    ) -> Result<TransitionEvent, SessionError> {
        if self.is_closed() {
            return Err(SessionError::SessionClosed);
        }
        Ok(self.result(result_id)?.check(req, at)?)
    }

    pub fn transition(&mut self, result_id: &str, req: &TransitionRequest, at: DateTime<Utc>) -> Result<(), SessionError> {
        if self.is_closed() {
            return Err(SessionError::SessionClosed);
        }
        self.result_mut(result_id)?.transition(req, at)?;
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        session_complete(self)
    }

    /// Closes the session; refused until every result is final.
    pub fn close(&mut self, at: DateTime<Utc>) -> Result<(), SessionError> {
        if self.is_closed() {
            return Err(SessionError::SessionClosed);
        }
        let open = self.results.iter().filter(|r| !r.state.is_final()).count();
        if open > 0 {
            return Err(SessionError::SessionIncomplete { open });
        }
        self.closed_at = Some(at);
        Ok(())
    }
}

pub fn session_complete(session: &Session) -> bool {
    session.results.iter().all(|r| r.state.is_final())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationProgress {
    pub configuration: Configuration,
    pub executed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub session_id: String,
    pub phase: Phase,
    pub total: usize,
    /// Count per state, all 11 states present.
    pub by_state: BTreeMap<CaseState, usize>,
    pub final_count: usize,
    pub percent_final: f64,
    pub by_configuration: Vec<ConfigurationProgress>,
    /// Open (assigned, non-final) entries per tester.
    pub open_by_tester: BTreeMap<String, usize>,
    pub unassigned_open: usize,
    pub complete: bool,
}

fn per_configuration(session: &Session) -> Vec<ConfigurationProgress> {
    let mut map: BTreeMap<&Configuration, (usize, usize)> = BTreeMap::new();
    for r in &session.results {
        let slot = map.entry(&r.configuration).or_default();
        slot.1 += 1;
        if r.state != CaseState::Untested {
            slot.0 += 1;
        }
    }
    map.into_iter()
        .map(|(configuration, (executed, total))| ConfigurationProgress {
            configuration: configuration.clone(),
            executed,
            total,
        })
        .collect()
}

pub fn progress(session: &Session) -> ProgressReport {
    let mut by_state: BTreeMap<CaseState, usize> = CaseState::ALL.iter().map(|s| (*s, 0)).collect();
    for r in &session.results {
        *by_state.entry(r.state).or_default() += 1;
    }
    let total = session.results.len();
    let final_count = session.results.iter().filter(|r| r.state.is_final()).count();
    let percent_final = if total == 0 { 0.0 } else { 100.0 * final_count as f64 / total as f64 };
    ProgressReport {
        session_id: session.id.clone(),
        phase: session.phase,
        total,
        by_state,
        final_count,
        percent_final,
        by_configuration: per_configuration(session),
        open_by_tester: session.open_counts(),
        unassigned_open: session.results.iter().filter(|r| r.assignee.is_none() && !r.state.is_final()).count(),
        complete: session_complete(session),
    }
}

impl ProgressReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Session {} ({})", self.session_id, self.phase);
        let _ = writeln!(out, "Final: {}/{} ({:.1}%)", self.final_count, self.total, self.percent_final);
        let _ = writeln!(out, "States:");
        for (state, count) in self.by_state.iter().filter(|(_, c)| **c > 0) {
            let _ = writeln!(out, "  {state}: {count}");
        }
        let _ = writeln!(out, "Configurations:");
        for c in &self.by_configuration {
            let _ = writeln!(out, "  {}: {}/{} executed", c.configuration, c.executed, c.total);
        }
        let _ = writeln!(out, "Open per tester:");
        for (tester, open) in &self.open_by_tester {
            let _ = writeln!(out, "  {tester}: {open}");
        }
        if self.unassigned_open > 0 {
            let _ = writeln!(out, "  (unassigned): {}", self.unassigned_open);
        }
        let _ = writeln!(out, "Complete: {}", if self.complete { "yes" } else { "no" });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindSpot {
    pub configuration: Configuration,
    pub coverage: f64,
}

/// Configurations whose executed fraction falls below `threshold`, least covered first.
pub fn blind_spots(session: &Session, threshold: f64) -> Result<Vec<BlindSpot>, SessionError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(SessionError::InvalidThreshold(threshold.to_string()));
    }
    let mut spots: Vec<BlindSpot> = per_configuration(session)
        .into_iter()
        .map(|c| BlindSpot { coverage: c.executed as f64 / c.total as f64, configuration: c.configuration })
        .filter(|s| s.coverage < threshold)
        .collect();
    spots.sort_by(|a, b| a.coverage.total_cmp(&b.coverage));
    Ok(spots)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestItem {
    pub result_id: String,
    pub case_id: String,
    pub title: String,
    pub configuration: Configuration,
    pub state: CaseState,
    pub assignee: Option<String>,
    pub issue_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadOutlier {
    pub tester: String,
    pub open: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingDigest {
    pub session_id: String,
    /// Failed and Failed & Blocked results.
    pub critical_failures: Vec<DigestItem>,
    pub retest_queue: Vec<DigestItem>,
    pub waiting_for_build: Vec<DigestItem>,
    pub workload_outliers: Vec<WorkloadOutlier>,
}

pub fn meeting_digest(session: &Session) -> MeetingDigest {
    let item = |r: &CaseResult| DigestItem {
        result_id: r.id.clone(),
        case_id: r.case_id.clone(),
        title: session.plan.case(&r.case_id).map(|c| c.title.clone()).unwrap_or_default(),
        configuration: r.configuration.clone(),
        state: r.state,
        assignee: r.assignee.clone(),
        issue_ref: r.issue_ref.clone(),
    };
    let pick = |pred: &dyn Fn(CaseState) -> bool| -> Vec<DigestItem> {
        session.results.iter().filter(|r| pred(r.state)).map(item).collect()
    };
    let counts = session.open_counts();
    let mean = if counts.is_empty() { 0.0 } else { counts.values().sum::<usize>() as f64 / counts.len() as f64 };
    let workload_outliers = counts
        .iter()
        .filter(|(_, open)| mean > 0.0 && **open as f64 > mean * OUTLIER_FACTOR)
        .map(|(tester, open)| WorkloadOutlier { tester: tester.clone(), open: *open, mean })
        .collect();
    MeetingDigest {
        session_id: session.id.clone(),
        critical_failures: pick(&|s| s.requires_issue()),
        retest_queue: pick(&|s| s == CaseState::Retest),
        waiting_for_build: pick(&|s| s == CaseState::WaitingForNewBuild),
        workload_outliers,
    }
}

impl MeetingDigest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Meeting digest for session {}", self.session_id);
        let section = |out: &mut String, title: &str, items: &[DigestItem]| {
            let _ = writeln!(out, "\n{title} ({})", items.len());
            for i in items {
                let issue = i.issue_ref.as_deref().map(|s| format!(" [{s}]")).unwrap_or_default();
                let who = i.assignee.as_deref().unwrap_or("unassigned");
                let _ = writeln!(out, "  - {} {} on {} ({who}){issue}", i.result_id, i.title, i.configuration);
            }
        };
        section(&mut out, "Critical failures", &self.critical_failures);
        section(&mut out, "Retest queue", &self.retest_queue);
        section(&mut out, "Waiting for new build", &self.waiting_for_build);
        let _ = writeln!(out, "\nWorkload outliers ({})", self.workload_outliers.len());
        for o in &self.workload_outliers {
            let _ = writeln!(out, "  - {}: {} open (mean {:.2})", o.tester, o.open, o.mean);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChangeKind {
    Bugfix,
    InternalChange,
    NewFeature,
    UxChange,
    BreakingChange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub kind: ChangeKind,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReleaseScope {
    pub changes: Vec<Change>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReleaseKind {
    Maintenance,
    Minor,
    Major,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("release scope has no changes")]
pub struct EmptyScope;

pub fn classify_release(scope: &ReleaseScope) -> Result<ReleaseKind, EmptyScope> {
    if scope.changes.is_empty() {
        return Err(EmptyScope);
    }
    let kinds: HashSet<ChangeKind> = scope.changes.iter().map(|c| c.kind).collect();
    Ok(if kinds.contains(&ChangeKind::BreakingChange) {
        ReleaseKind::Major
    } else if kinds.contains(&ChangeKind::NewFeature) || kinds.contains(&ChangeKind::UxChange) {
        ReleaseKind::Minor
    } else {
        ReleaseKind::Maintenance
    })
}
