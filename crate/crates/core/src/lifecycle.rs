//! The manual test case life cycle.
//!
//! Every result starts `Untested`. Testers record execution outcomes;
//! developers and the test manager move failed or blocked cases towards a
//! retest; only the test manager may waive (`Won't test`) or postpone.
//!
//! | role        | from                          | to                                                    |
//! |-------------|-------------------------------|-------------------------------------------------------|
//! | Tester      | Untested, Retest              | Passed, Passed with Remarks, Not applicable, Failed, Failed & Blocked |
//! | Developer   | Failed, Failed & Blocked      | Waiting for new build                                 |
//! | Developer   | Untested                      | Blocked                                               |
//! | Developer   | Blocked, Waiting for new build| Retest                                                |
//! | TestManager | everything Developer may do, plus Untested → Won't test and Failed / Failed & Blocked → Failed & Postponed |
//!
//! Entering `Failed` or `Failed & Blocked` requires an issue reference.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseState {
    #[serde(rename = "Untested")]
    Untested,
    #[serde(rename = "Passed")]
    Passed,
    #[serde(rename = "Passed with Remarks")]
    PassedWithRemarks,
    #[serde(rename = "Not applicable")]
    NotApplicable,
    #[serde(rename = "Won't test")]
    WontTest,
    #[serde(rename = "Failed")]
    Failed,
    #[serde(rename = "Failed & Blocked")]
    FailedAndBlocked,
    #[serde(rename = "Retest")]
    Retest,
    #[serde(rename = "Waiting for new build")]
    WaitingForNewBuild,
    #[serde(rename = "Blocked")]
    Blocked,
    #[serde(rename = "Failed & Postponed")]
    FailedAndPostponed,
}

impl CaseState {
    pub const ALL: [CaseState; 11] = [
        Self::Untested,
        Self::Passed,
        Self::PassedWithRemarks,
        Self::NotApplicable,
        Self::WontTest,
        Self::Failed,
        Self::FailedAndBlocked,
        Self::Retest,
        Self::WaitingForNewBuild,
        Self::Blocked,
        Self::FailedAndPostponed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Untested => "Untested",
            Self::Passed => "Passed",
            Self::PassedWithRemarks => "Passed with Remarks",
            Self::NotApplicable => "Not applicable",
            Self::WontTest => "Won't test",
            Self::Failed => "Failed",
            Self::FailedAndBlocked => "Failed & Blocked",
            Self::Retest => "Retest",
            Self::WaitingForNewBuild => "Waiting for new build",
            Self::Blocked => "Blocked",
            Self::FailedAndPostponed => "Failed & Postponed",
        }
    }

    pub fn is_final(self) -> bool {
        is_final(self)
    }

    pub fn requires_issue(self) -> bool {
        matches!(self, Self::Failed | Self::FailedAndBlocked)
    }
}

pub fn is_final(state: CaseState) -> bool {
    matches!(
        state,
        CaseState::Passed
            | CaseState::PassedWithRemarks
            | CaseState::NotApplicable
            | CaseState::WontTest
            | CaseState::FailedAndPostponed
    )
}

impl fmt::Display for CaseState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn squash(s: &str) -> String {
    s.chars().filter(char::is_ascii_alphanumeric).map(|c| c.to_ascii_lowercase()).collect()
}

impl FromStr for CaseState {
    type Err = String;

    /// Accepts the display labels as well as loose spellings such as
    /// `failed-and-blocked`, `waiting_for_new_build` or `WontTest`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = squash(&s.replace('&', "and"));
        Self::ALL
            .into_iter()
            .find(|state| squash(&state.label().replace('&', "and")) == wanted || squash(&format!("{state:?}")) == wanted)
            .ok_or_else(|| format!("unknown case state `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Tester,
    Developer,
    TestManager,
}

impl Role {
    pub const ALL: [Role; 3] = [Self::Tester, Self::Developer, Self::TestManager];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match squash(s).as_str() {
            "tester" => Ok(Self::Tester),
            "developer" | "dev" => Ok(Self::Developer),
            "testmanager" | "manager" => Ok(Self::TestManager),
            _ => Err(format!("unknown role `{s}`")),
        }
    }
}

/// Target states `role` may set from `state`.
pub fn allowed_transitions(state: CaseState, role: Role) -> BTreeSet<CaseState> {
    use CaseState::*;
    let mut out = BTreeSet::new();
    match role {
        Role::Tester => {
            if matches!(state, Untested | Retest) {
                out.extend([Passed, PassedWithRemarks, NotApplicable, Failed, FailedAndBlocked]);
            }
        }
        Role::Developer | Role::TestManager => {
            match state {
                Failed | FailedAndBlocked => {
                    out.insert(WaitingForNewBuild);
                }
                Untested => {
                    out.insert(Blocked);
                }
                Blocked | WaitingForNewBuild => {
                    out.insert(Retest);
                }
                _ => {}
            }
            if role == Role::TestManager {
                match state {
                    Untested => {
                        out.insert(WontTest);
                    }
                    Failed | FailedAndBlocked => {
                        out.insert(FailedAndPostponed);
                    }
                    _ => {}
                }
            }
        }
    }
    out
}

pub fn is_allowed(from: CaseState, to: CaseState, role: Role) -> bool {
    allowed_transitions(from, role).contains(&to)
}

/// A manual test case: an area to explore, not a step-by-step script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub area: String,
    #[serde(default)]
    pub feature: Option<String>,
    /// Eligible for Final Testing.
    #[serde(default)]
    pub basic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UiMode {
    Gui,
    Headless,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    pub os: String,
    pub desktop_env: String,
    pub jre: String,
    pub ui_mode: UiMode,
}

impl Configuration {
    pub fn new(os: &str, desktop_env: &str, jre: &str, ui_mode: UiMode) -> Self {
        Self { os: os.into(), desktop_env: desktop_env.into(), jre: jre.into(), ui_mode }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {} / {} / {:?}", self.os, self.desktop_env, self.jre, self.ui_mode)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub from: CaseState,
    pub to: CaseState,
    pub role: Role,
    pub actor: String,
    pub at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum LifecycleError {
    #[error("{role} may not move a case from `{from}` to `{to}`")]
    IllegalTransition { from: CaseState, to: CaseState, role: Role },
    #[error("entering `{0}` requires an issue reference")]
    MissingIssueRef(CaseState),
    #[error("stale state: expected `{expected}` but the case is `{actual}`")]
    StaleState { expected: CaseState, actual: CaseState },
}

/// A requested state change. `expected_from` is the state the caller
/// believes the result is in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRequest {
    pub expected_from: CaseState,
    pub to: CaseState,
    pub role: Role,
    pub actor: String,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub issue_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    pub case_id: String,
    pub configuration: Configuration,
    pub state: CaseState,
    pub assignee: Option<String>,
    pub issue_ref: Option<String>,
    pub history: Vec<TransitionEvent>,
}

impl CaseResult {
    pub fn new(id: impl Into<String>, case_id: impl Into<String>, configuration: Configuration) -> Self {
        Self {
            id: id.into(),
            case_id: case_id.into(),
            configuration,
            state: CaseState::Untested,
            assignee: None,
            issue_ref: None,
            history: Vec::new(),
        }
    }

    /// Checks a request without applying it; returns the event it would record.
    pub fn check(&self, req: &TransitionRequest, at: DateTime<Utc>) -> Result<TransitionEvent, LifecycleError> {
        if req.expected_from != self.state {
            return Err(LifecycleError::StaleState { expected: req.expected_from, actual: self.state });
        }
        if !is_allowed(self.state, req.to, req.role) {
            return Err(LifecycleError::IllegalTransition { from: self.state, to: req.to, role: req.role });
        }
        let issue_ref = req.issue_ref.clone().filter(|s| !s.trim().is_empty());
        if req.to.requires_issue() && issue_ref.is_none() && self.issue_ref.is_none() {
            return Err(LifecycleError::MissingIssueRef(req.to));
        }
        Ok(TransitionEvent {
            from: self.state,
            to: req.to,
            role: req.role,
            actor: req.actor.clone(),
            at,
            note: req.note.clone(),
            issue_ref,
        })
    }

    /// Compare-and-set state change.
    pub fn transition(&mut self, req: &TransitionRequest, at: DateTime<Utc>) -> Result<&TransitionEvent, LifecycleError> {
        let event = self.check(req, at)?;
        self.apply(event);
        Ok(self.history.last().expect("just pushed"))
    }

    fn apply(&mut self, event: TransitionEvent) {
        self.state = event.to;
        if let Some(issue) = &event.issue_ref {
            self.issue_ref = Some(issue.clone());
        }
        self.history.push(event);
    }

    /// Current state as a fold over the history.
    pub fn replayed_state(&self) -> Result<CaseState, HistoryError> {
        validate_history(&self.history)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("history event {index} is invalid: {reason}")]
pub struct HistoryError {
    pub index: usize,
    pub reason: String,
}

/// Replays `events` from `Untested`, returning the final state or the index
/// of the first hop the table does not permit.
pub fn validate_history(events: &[TransitionEvent]) -> Result<CaseState, HistoryError> {
    let mut state = CaseState::Untested;
    let mut has_issue = false;
    for (index, event) in events.iter().enumerate() {
        if event.from != state {
            return Err(HistoryError { index, reason: format!("starts from `{}` but the case is `{state}`", event.from) });
        }
        if !is_allowed(event.from, event.to, event.role) {
            return Err(HistoryError {
                index,
                reason: format!("{} may not move `{}` to `{}`", event.role, event.from, event.to),
            });
        }
        has_issue |= event.issue_ref.is_some();
        if event.to.requires_issue() && !has_issue {
            return Err(HistoryError { index, reason: format!("`{}` without an issue reference", event.to) });
        }
        state = event.to;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use CaseState::*;

    fn cfg() -> Configuration {
        Configuration::new("Windows 11", "default", "17", UiMode::Gui)
    }

    fn req(from: CaseState, to: CaseState, role: Role, issue: Option<&str>) -> TransitionRequest {
        TransitionRequest {
            expected_from: from,
            to,
            role,
            actor: "someone".into(),
            note: None,
            issue_ref: issue.map(str::to_owned),
        }
    }

    #[test]
    fn table_spots() {
        assert_eq!(
            allowed_transitions(Untested, Role::Tester),
            BTreeSet::from([Passed, PassedWithRemarks, NotApplicable, Failed, FailedAndBlocked])
        );
        for role in Role::ALL {
            assert!(allowed_transitions(Passed, role).is_empty());
        }
        assert_eq!(allowed_transitions(WaitingForNewBuild, Role::Developer), BTreeSet::from([Retest]));
        assert!(!is_final(Retest));
    }

    #[test]
    fn labels_round_trip() {
        for s in CaseState::ALL {
            assert_eq!(s.label().parse::<CaseState>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.label()));
        }
        assert_eq!("failed-and-blocked".parse::<CaseState>().unwrap(), FailedAndBlocked);
        assert_eq!("WaitingForNewBuild".parse::<CaseState>().unwrap(), WaitingForNewBuild);
        assert_eq!("wont_test".parse::<CaseState>().unwrap(), WontTest);
        assert!("nope".parse::<CaseState>().is_err());
        assert_eq!("test-manager".parse::<Role>().unwrap(), Role::TestManager);
    }

    #[test]
    fn failing_with_issue() {
        let mut r = CaseResult::new("r1", "c1", cfg());
        r.transition(&req(Untested, Failed, Role::Tester, Some("#1234")), Utc::now()).unwrap();
        assert_eq!(r.state, Failed);
        assert_eq!(r.issue_ref.as_deref(), Some("#1234"));
        r.transition(&req(Failed, WaitingForNewBuild, Role::Developer, None), Utc::now()).unwrap();
        assert_eq!(r.state, WaitingForNewBuild);
    }

    #[test]
    fn rejections() {
        let mut r = CaseResult::new("r1", "c1", cfg());
        assert_eq!(
            r.transition(&req(Untested, Failed, Role::Tester, None), Utc::now()).unwrap_err(),
            LifecycleError::MissingIssueRef(Failed)
        );
        assert_eq!(
            r.transition(&req(Untested, Failed, Role::Tester, Some("  ")), Utc::now()).unwrap_err(),
            LifecycleError::MissingIssueRef(Failed)
        );
        assert_eq!(
            r.transition(&req(Retest, Passed, Role::Tester, None), Utc::now()).unwrap_err(),
            LifecycleError::StaleState { expected: Retest, actual: Untested }
        );
        r.transition(&req(Untested, Failed, Role::Tester, Some("#1")), Utc::now()).unwrap();
        assert_eq!(
            r.transition(&req(Failed, FailedAndPostponed, Role::Tester, None), Utc::now()).unwrap_err(),
            LifecycleError::IllegalTransition { from: Failed, to: FailedAndPostponed, role: Role::Tester }
        );
        assert_eq!(r.history.len(), 1);
    }

    #[test]
    fn history_validation() {
        assert_eq!(validate_history(&[]).unwrap(), Untested);
        let mut r = CaseResult::new("r1", "c1", cfg());
        r.transition(&req(Untested, Failed, Role::Tester, Some("#1")), Utc::now()).unwrap();
        r.transition(&req(Failed, WaitingForNewBuild, Role::Developer, None), Utc::now()).unwrap();
        r.transition(&req(WaitingForNewBuild, Retest, Role::Developer, None), Utc::now()).unwrap();
        // the earlier issue reference carries over on a repeated failure
        r.transition(&req(Retest, Failed, Role::Tester, None), Utc::now()).unwrap();
        r.transition(&req(Failed, WaitingForNewBuild, Role::Developer, None), Utc::now()).unwrap();
        r.transition(&req(WaitingForNewBuild, Retest, Role::TestManager, None), Utc::now()).unwrap();
        r.transition(&req(Retest, Passed, Role::Tester, None), Utc::now()).unwrap();
        assert_eq!(r.replayed_state().unwrap(), Passed);

        let mut bad = r.history.clone();
        bad[2].role = Role::Tester;
        assert_eq!(validate_history(&bad).unwrap_err().index, 2);
        let mut gap = r.history.clone();
        gap.remove(1);
        assert_eq!(validate_history(&gap).unwrap_err().index, 1);
    }
}
