//! Runs bound scenarios against fresh simulated networks.
//!
//! Every scenario gets its own [`NetSim`](crate::netsim::NetSim). Steps run
//! strictly in order and the first failing step ends the scenario; the
//! simulation is torn down on every path. "Within N seconds" waits are
//! measured on the virtual clock, polled every `poll_interval_ms`, with a
//! wall-clock cap per scenario.

mod backend;
mod registry;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::SimulatorBackend;
pub use registry::{
    builtin_registry, format_set, RegistryBuilder, RegistryError, ScenarioContext, StepFailure, StepFn, StepRegistry,
    WorkflowRecord,
};

use crate::lang::{bind_steps_indexed, normalize_and, ClauseKind, FeatureFile, Scenario, Span, Tag, TagExpr};
use crate::netsim::Latency;

pub const REPORT_SCHEMA: &str = "relkit.run-report.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// Frequent runs; scenarios with the slow tag are skipped.
    #[default]
    Standard,
    Full,
}

impl std::str::FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(Self::Standard),
            "full" => Ok(Self::Full),
            _ => Err(format!("unknown run mode `{s}`; expected standard or full")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub mode: RunMode,
    pub slow_tag: String,
    pub poll_interval_ms: u64,
    pub real_time_cap: Duration,
    pub parallelism: usize,
    pub latency: Latency,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Standard,
            slow_tag: "Slow".into(),
            poll_interval_ms: 100,
            real_time_cap: Duration::from_secs(60),
            parallelism: 1,
            latency: Latency::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("poll interval must be positive")]
    PollInterval,
    #[error("real-time cap must be positive")]
    RealTimeCap,
    #[error("parallelism must be positive")]
    Parallelism,
    #[error("invalid slow tag `{0}`")]
    SlowTag(String),
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.poll_interval_ms == 0 {
            return Err(ConfigError::PollInterval);
        }
        if self.real_time_cap.is_zero() {
            return Err(ConfigError::RealTimeCap);
        }
        if self.parallelism == 0 {
            return Err(ConfigError::Parallelism);
        }
        if Tag::new(&self.slow_tag).is_none() {
            return Err(ConfigError::SlowTag(self.slow_tag.clone()));
        }
        Ok(())
    }

    fn slow_tag_name(&self) -> &str {
        self.slow_tag.strip_prefix('@').unwrap_or(&self.slow_tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum ScenarioStatus {
    Passed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        warning: Option<String>,
    },
    Failed {
        step: usize,
        span: Span,
        clause: String,
        expected: String,
        actual: String,
        message: String,
    },
    Error {
        step: usize,
        span: Span,
        clause: String,
        message: String,
    },
    Skipped {
        reason: String,
    },
}

impl ScenarioStatus {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Passed { .. } => "passed",
            Self::Failed { .. } => "failed",
            Self::Error { .. } => "error",
            Self::Skipped { .. } => "skipped",
        }
    }

    pub fn is_problem(&self) -> bool {
        matches!(self, Self::Failed { .. } | Self::Error { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub file: String,
    pub title: String,
    pub tags: Vec<Tag>,
    #[serde(flatten)]
    pub status: ScenarioStatus,
    pub duration_ms: u64,
    pub virtual_ms: u64,
}

impl ScenarioResult {
    pub fn executed(&self) -> bool {
        !matches!(self.status, ScenarioStatus::Skipped { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub errors: usize,
    pub skipped: usize,
}

impl Totals {
    pub fn of(results: &[ScenarioResult]) -> Self {
        let mut t = Self { total: results.len(), ..Self::default() };
        for r in results {
            match r.status {
                ScenarioStatus::Passed { .. } => t.passed += 1,
                ScenarioStatus::Failed { .. } => t.failed += 1,
                ScenarioStatus::Error { .. } => t.errors += 1,
                ScenarioStatus::Skipped { .. } => t.skipped += 1,
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub mode: RunMode,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub totals: Totals,
    pub results: Vec<ScenarioResult>,
}

impl RunReport {
    /// No Failed or Error results. Skipped scenarios do not count against a run.
    pub fn succeeded(&self) -> bool {
        !self.results.iter().any(|r| r.status.is_problem())
    }

    pub fn totals_consistent(&self) -> bool {
        self.totals == Totals::of(&self.results)
    }
}

fn clause_label(scenario: &Scenario, index: usize) -> (Span, String) {
    scenario
        .clauses
        .get(index)
        .map(|c| (c.span, format!("{} {}", c.kind, c.text)))
        .unwrap_or_default()
}

/// Runs one scenario on a private backend.
pub fn run_scenario(scenario: &Scenario, registry: &StepRegistry, config: &RunConfig) -> ScenarioResult {
    let backend = SimulatorBackend::new(config.latency);
    run_scenario_with("", scenario, registry, config, &backend)
}

pub fn run_scenario_with(
    file: &str,
    scenario: &Scenario,
    registry: &StepRegistry,
    config: &RunConfig,
    backend: &SimulatorBackend,
) -> ScenarioResult {
    let started = Instant::now();
    let scenario = normalize_and(scenario.clone());
    let (status, virtual_ms) = execute(&scenario, registry, config, backend);
    ScenarioResult {
        file: file.to_owned(),
        title: scenario.title.clone(),
        tags: scenario.tags.clone(),
        status,
        duration_ms: u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX),
        virtual_ms,
    }
}

fn execute(
    scenario: &Scenario,
    registry: &StepRegistry,
    config: &RunConfig,
    backend: &SimulatorBackend,
) -> (ScenarioStatus, u64) {
    let error_at = |step: usize, message: String| {
        let (span, clause) = clause_label(scenario, step);
        ScenarioStatus::Error { step, span, clause, message }
    };
    let steps = match bind_steps_indexed(scenario, registry.patterns()) {
        Ok(steps) => steps,
        Err((step, e)) => return (error_at(step, e.to_string()), 0),
    };

    let mut ctx = ScenarioContext::new(config, backend);
    let mut outcome = None;
    for (index, step) in steps.iter().enumerate() {
        let Some(behavior) = registry.behavior(&step.action) else {
            outcome = Some(error_at(index, format!("no behavior for action `{}`", step.action)));
            break;
        };
        let result = ctx.check_wall_clock().and_then(|()| {
            catch_unwind(AssertUnwindSafe(|| behavior(&mut ctx, &step.args)))
                .unwrap_or_else(|_| Err(StepFailure::Error("step panicked".into())))
        });
        match result {
            Ok(()) => {}
            Err(StepFailure::Assertion { expected, actual, message }) => {
                let (span, clause) = clause_label(scenario, index);
                outcome = Some(ScenarioStatus::Failed { step: index, span, clause, expected, actual, message });
                break;
            }
            Err(StepFailure::Error(message)) => {
                outcome = Some(error_at(index, message));
                break;
            }
        }
    }

    let status = outcome.unwrap_or_else(|| {
        // a scenario made only of Given steps still has to provision cleanly
        if let Err(StepFailure::Error(message) | StepFailure::Assertion { message, .. }) = ctx.sim().map(|_| ()) {
            return error_at(steps.len().saturating_sub(1), message);
        }
        let has_then = scenario.clauses.iter().any(|c| c.kind == ClauseKind::Then);
        ScenarioStatus::Passed { warning: (!has_then).then(|| "no Then clauses".to_owned()) }
    });
    let virtual_ms = ctx.virtual_ms();
    ctx.finish();
    (status, virtual_ms)
}

/// Selects scenarios by `tag_expr`, skips slow ones in Standard mode, and
/// runs the rest with up to `config.parallelism` workers. Results keep the
/// input order.
pub fn run_suite(
    files: &[FeatureFile],
    tag_expr: Option<&TagExpr>,
    registry: &StepRegistry,
    config: &RunConfig,
) -> RunReport {
    let started_at = Utc::now();
    let selected: Vec<(&str, &Scenario)> = files
        .iter()
        .flat_map(|f| f.scenarios.iter().map(move |s| (f.path.as_str(), s)))
        .filter(|(_, s)| tag_expr.is_none_or(|e| e.matches_scenario(s)))
        .collect();

    let backend = SimulatorBackend::new(config.latency);
    let slots: Vec<Mutex<Option<ScenarioResult>>> = selected.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.parallelism.max(1).min(selected.len());

    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some((file, scenario)) = selected.get(i) else { break };
        let result = if config.mode == RunMode::Standard && scenario.has_tag(config.slow_tag_name()) {
            ScenarioResult {
                file: (*file).to_owned(),
                title: scenario.title.clone(),
                tags: scenario.tags.clone(),
                status: ScenarioStatus::Skipped { reason: "slow".into() },
                duration_ms: 0,
                virtual_ms: 0,
            }
        } else {
            run_scenario_with(file, scenario, registry, config, &backend)
        };
        *slots[i].lock().expect("result slot") = Some(result);
    };

    if workers <= 1 {
        work();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(work);
            }
        });
    }

    let results: Vec<ScenarioResult> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every scenario ran"))
        .collect();
    RunReport {
        schema: REPORT_SCHEMA.into(),
        mode: config.mode,
        started_at,
        finished_at: Utc::now(),
        totals: Totals::of(&results),
        results,
    }
}
