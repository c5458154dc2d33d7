//! Step registry and the built-in step library.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::backend::SimulatorBackend;
use super::RunConfig;
use crate::lang::{ActionId, ArgValue, ClauseKind, PatternError, PatternSet, StepPattern};
use crate::netsim::{
    parse_connection, parse_connections, parse_instance_decl, Access, ComponentDecl, Fault, InstanceSpec, InstanceState,
    LogLevel, NetSim, NetSimError, WorkflowExpectation, WorkflowOutcome, WorkflowSpec,
};

/// Why a step did not pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepFailure {
    Assertion { expected: String, actual: String, message: String },
    Error(String),
}

impl StepFailure {
    pub fn assertion(expected: impl Into<String>, actual: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Assertion { expected: expected.into(), actual: actual.into(), message: message.into() }
    }
}

impl From<NetSimError> for StepFailure {
    fn from(e: NetSimError) -> Self {
        Self::Error(e.to_string())
    }
}

pub type StepFn = Arc<dyn Fn(&mut ScenarioContext<'_>, &[ArgValue]) -> Result<(), StepFailure> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowRecord {
    pub spec: WorkflowSpec,
    pub outcome: WorkflowOutcome,
}

impl WorkflowRecord {
    /// Whether the outcome is what the workflow declared it expects.
    pub fn as_expected(&self) -> bool {
        let succeeded = self.outcome == WorkflowOutcome::Success;
        succeeded == (self.spec.expected == WorkflowExpectation::Success)
    }
}

/// Per-scenario state handed to every step.
///
/// Given steps fill a draft network; the first step that needs the
/// simulator provisions it from the draft.
pub struct ScenarioContext<'a> {
    config: &'a RunConfig,
    backend: &'a SimulatorBackend,
    draft: Vec<InstanceSpec>,
    sim: Option<NetSim>,
    workflows: BTreeMap<String, WorkflowRecord>,
    wall_start: Instant,
}

impl<'a> ScenarioContext<'a> {
    pub fn new(config: &'a RunConfig, backend: &'a SimulatorBackend) -> Self {
        Self {
            config,
            backend,
            draft: Vec::new(),
            sim: None,
            workflows: BTreeMap::new(),
            wall_start: Instant::now(),
        }
    }

    pub fn config(&self) -> &RunConfig {
        self.config
    }

    pub fn is_provisioned(&self) -> bool {
        self.sim.is_some()
    }

    pub fn draft(&self) -> &[InstanceSpec] {
        &self.draft
    }

    pub fn declare(&mut self, spec: InstanceSpec) -> Result<(), StepFailure> {
        self.ensure_drafting()?;
        self.draft.push(spec);
        Ok(())
    }

    fn ensure_drafting(&self) -> Result<(), StepFailure> {
        if self.sim.is_some() {
            return Err(StepFailure::Error("the network is already running; declare it before any When step".into()));
        }
        Ok(())
    }

    pub fn draft_instance_mut(&mut self, id: &str) -> Result<&mut InstanceSpec, StepFailure> {
        self.ensure_drafting()?;
        self.draft
            .iter_mut()
            .find(|s| s.id == id)
            .ok_or_else(|| StepFailure::Error(format!("instance `{id}` has not been declared")))
    }

    /// The running simulation, provisioned on first use.
    pub fn sim(&mut self) -> Result<&mut NetSim, StepFailure> {
        if self.sim.is_none() {
            let sim = self.backend.provision(self.draft.clone())?;
            self.sim = Some(sim);
        }
        Ok(self.sim.as_mut().expect("provisioned above"))
    }

    pub fn virtual_ms(&self) -> u64 {
        self.sim.as_ref().map_or(0, NetSim::clock_ms)
    }

    pub fn check_wall_clock(&self) -> Result<(), StepFailure> {
        if self.wall_start.elapsed() > self.config.real_time_cap {
            return Err(StepFailure::Error(format!(
                "real-time cap of {:?} exceeded",
                self.config.real_time_cap
            )));
        }
        Ok(())
    }

    pub fn workflow(&self, name: &str) -> Result<&WorkflowRecord, StepFailure> {
        self.workflows
            .get(name)
            .ok_or_else(|| StepFailure::Error(format!("workflow `{name}` has not been executed")))
    }

    /// Polls `predicate`, advancing virtual time by the poll interval, until it
    /// holds or `within` has elapsed on the virtual clock.
    pub fn await_condition(
        &mut self,
        within: Duration,
        expected: &str,
        predicate: impl Fn(&NetSim) -> bool,
        describe: impl Fn(&NetSim) -> String,
    ) -> Result<(), StepFailure> {
        let bound = u64::try_from(within.as_millis()).unwrap_or(u64::MAX);
        let poll = self.config.poll_interval_ms;
        let start = self.sim()?.clock_ms();
        loop {
            let sim = self.sim.as_ref().expect("provisioned");
            if predicate(sim) {
                return Ok(());
            }
            let waited = sim.clock_ms() - start;
            if waited >= bound {
                return Err(StepFailure::assertion(
                    expected,
                    describe(sim),
                    format!("condition not met within {} ms of virtual time", bound),
                ));
            }
            self.check_wall_clock()?;
            let step = poll.min(bound - waited);
            self.sim.as_mut().expect("provisioned").advance(step);
        }
    }

    /// Tears the simulation down and returns it to the backend.
    pub(crate) fn finish(&mut self) {
        if let Some(sim) = self.sim.take() {
            self.backend.release(sim);
        }
    }
}

impl Drop for ScenarioContext<'_> {
    fn drop(&mut self) {
        self.finish();
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("action `{0}` is registered twice with different behaviors")]
    DuplicateAction(ActionId),
}

/// Patterns plus the behavior behind every action id.
#[derive(Clone)]
pub struct StepRegistry {
    patterns: PatternSet,
    actions: HashMap<ActionId, StepFn>,
}

impl fmt::Debug for StepRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StepRegistry")
            .field("patterns", &self.patterns.patterns().len())
            .field("actions", &self.actions.keys().collect::<BTreeSet<_>>())
            .finish()
    }
}

#[derive(Default)]
pub struct RegistryBuilder {
    patterns: Vec<StepPattern>,
    actions: HashMap<ActionId, StepFn>,
    errors: Vec<RegistryError>,
}

impl RegistryBuilder {
    pub fn step<F>(mut self, kind: ClauseKind, template: &str, action: &str, behavior: F) -> Self
    where
        F: Fn(&mut ScenarioContext<'_>, &[ArgValue]) -> Result<(), StepFailure> + Send + Sync + 'static,
    {
        match StepPattern::new(kind, template, action) {
            Ok(p) => self.patterns.push(p),
            Err(e) => self.errors.push(e.into()),
        }
        let id = ActionId::new(action);
        if self.actions.insert(id.clone(), Arc::new(behavior)).is_some() {
            self.errors.push(RegistryError::DuplicateAction(id));
        }
        self
    }

    /// Adds another pattern for an action that already has a behavior.
    pub fn alias(mut self, kind: ClauseKind, template: &str, action: &str) -> Self {
        match StepPattern::new(kind, template, action) {
            Ok(p) => self.patterns.push(p),
            Err(e) => self.errors.push(e.into()),
        }
        self
    }

    pub fn given<F>(self, template: &str, action: &str, behavior: F) -> Self
    where
        F: Fn(&mut ScenarioContext<'_>, &[ArgValue]) -> Result<(), StepFailure> + Send + Sync + 'static,
    {
        self.step(ClauseKind::Given, template, action, behavior)
    }

    pub fn when<F>(self, template: &str, action: &str, behavior: F) -> Self
    where
        F: Fn(&mut ScenarioContext<'_>, &[ArgValue]) -> Result<(), StepFailure> + Send + Sync + 'static,
    {
        self.step(ClauseKind::When, template, action, behavior)
    }

    pub fn then<F>(self, template: &str, action: &str, behavior: F) -> Self
    where
        F: Fn(&mut ScenarioContext<'_>, &[ArgValue]) -> Result<(), StepFailure> + Send + Sync + 'static,
    {
        self.step(ClauseKind::Then, template, action, behavior)
    }

    pub fn build(mut self) -> Result<StepRegistry, RegistryError> {
        if let Some(e) = self.errors.drain(..).next() {
            return Err(e);
        }
        for p in &self.patterns {
            if !self.actions.contains_key(p.action()) {
                return Err(RegistryError::Pattern(PatternError::Invalid {
                    template: p.template().to_owned(),
                    message: format!("no behavior registered for action `{}`", p.action()),
                }));
            }
        }
        Ok(StepRegistry { patterns: PatternSet::new(self.patterns)?, actions: self.actions })
    }
}

impl StepRegistry {
    pub fn builder() -> RegistryBuilder {
        RegistryBuilder::default()
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    pub fn behavior(&self, action: &ActionId) -> Option<&StepFn> {
        self.actions.get(action)
    }
}

fn text(args: &[ArgValue], i: usize) -> Result<&str, StepFailure> {
    args.get(i)
        .and_then(ArgValue::as_str)
        .ok_or_else(|| StepFailure::Error(format!("argument {i} is not text")))
}

fn names(args: &[ArgValue], i: usize) -> Result<&[String], StepFailure> {
    args.get(i)
        .and_then(ArgValue::as_names)
        .ok_or_else(|| StepFailure::Error(format!("argument {i} is not a name list")))
}

fn duration(args: &[ArgValue], i: usize) -> Result<Duration, StepFailure> {
    args.get(i)
        .and_then(ArgValue::as_duration)
        .ok_or_else(|| StepFailure::Error(format!("argument {i} is not a duration")))
}

fn int(args: &[ArgValue], i: usize) -> Result<i64, StepFailure> {
    args.get(i)
        .and_then(ArgValue::as_int)
        .ok_or_else(|| StepFailure::Error(format!("argument {i} is not an integer")))
}

pub fn format_set<'s>(items: impl IntoIterator<Item = &'s String>) -> String {
    let items: Vec<&str> = items.into_iter().map(String::as_str).collect();
    format!("{{{}}}", items.join(", "))
}

fn parse_state(word: &str) -> Result<InstanceState, StepFailure> {
    match word.to_ascii_lowercase().as_str() {
        "stopped" => Ok(InstanceState::Stopped),
        "starting" => Ok(InstanceState::Starting),
        "running" => Ok(InstanceState::Running),
        "failed" => Ok(InstanceState::Failed),
        _ => Err(StepFailure::Error(format!("unknown instance state `{word}`"))),
    }
}

fn parse_access(word: &str) -> Result<Access, StepFailure> {
    match word.to_ascii_lowercase().as_str() {
        "public" => Ok(Access::Public),
        "private" => Ok(Access::Private),
        _ => Err(StepFailure::Error(format!("unknown access `{word}`; use public, private or group \"name\""))),
    }
}

fn parse_level(word: &str) -> Result<LogLevel, StepFailure> {
    word.parse().map_err(StepFailure::Error)
}

fn run_workflow(ctx: &mut ScenarioContext<'_>, args: &[ArgValue], expected: WorkflowExpectation) -> Result<(), StepFailure> {
    let spec = WorkflowSpec::parse(text(args, 0)?, text(args, 1)?, expected)?;
    let outcome = ctx.sim()?.execute_workflow(&spec);
    ctx.workflows.insert(spec.name.clone(), WorkflowRecord { spec, outcome });
    Ok(())
}

fn describe_outcome(outcome: &WorkflowOutcome) -> String {
    match outcome {
        WorkflowOutcome::Success => "success".into(),
        WorkflowOutcome::Failure { step, reason } => format!("failure at step {step} ({reason})"),
    }
}

fn log_assertion(
    ctx: &mut ScenarioContext<'_>,
    id: &str,
    pattern: &str,
    level: LogLevel,
    present: bool,
) -> Result<(), StepFailure> {
    let hits = ctx.sim()?.query_logs(id, level, pattern)?;
    let ok = hits.is_empty() != present;
    if ok {
        return Ok(());
    }
    let (expected, actual) = if present {
        (format!("an entry containing `{pattern}` at level {level:?} or above"), "no such entry".to_owned())
    } else {
        (
            format!("no entry containing `{pattern}` at level {level:?} or above"),
            format!("{} matching entries, first: `{}`", hits.len(), hits[0].message),
        )
    };
    Err(StepFailure::assertion(expected, actual, format!("log of {id}")))
}

fn component_assertion(ctx: &mut ScenarioContext<'_>, args: &[ArgValue], visible: bool) -> Result<(), StepFailure> {
    let (component, owner, viewer) = (text(args, 0)?, text(args, 1)?, text(args, 2)?);
    let actual = ctx.sim()?.component_visible_to(owner, component, viewer)?;
    if actual == visible {
        return Ok(());
    }
    let word = |v: bool| if v { "visible" } else { "not visible" };
    Err(StepFailure::assertion(
        word(visible),
        word(actual),
        format!("component {component} of {owner} as seen from {viewer}"),
    ))
}

/// The step library covering network setup, startup, visibility,
/// workflows, command line parameters, authorization, logs and faults.
pub fn builtin_registry() -> StepRegistry {
    StepRegistry::builder()
        // -- setup
        .given("instances {names} using the {word} build", "declare_instances", |ctx, args| {
            let build = text(args, 1)?.to_owned();
            for item in names(args, 0)? {
                let decl = parse_instance_decl(item)?;
                let mut spec = InstanceSpec::new(decl.id);
                spec.build = build.clone();
                spec.relay = decl.relay;
                spec.headless = decl.headless;
                ctx.declare(spec)?;
            }
            Ok(())
        })
        .given("configured network connections {string}", "declare_connections", |ctx, args| {
            for conn in parse_connections(text(args, 0)?)? {
                let source = ctx.draft_instance_mut(&conn.source)?;
                source.connections.push(conn);
            }
            Ok(())
        })
        .given(
            "instance {string} is started with command line parameters {string}",
            "declare_cli_params",
            |ctx, args| {
                let params: Vec<String> = text(args, 1)?.split_whitespace().map(str::to_owned).collect();
                ctx.draft_instance_mut(text(args, 0)?)?.cli_params.extend(params);
                Ok(())
            },
        )
        .given("instance {string} provides component {string} with {word} access", "declare_component", |ctx, args| {
            let access = parse_access(text(args, 2)?)?;
            let component = ComponentDecl::new(text(args, 1)?, access);
            ctx.draft_instance_mut(text(args, 0)?)?.components.push(component);
            Ok(())
        })
        .given(
            "instance {string} provides component {string} for group {string}",
            "declare_group_component",
            |ctx, args| {
                let component = ComponentDecl::new(text(args, 1)?, Access::Group(text(args, 2)?.to_owned()));
                ctx.draft_instance_mut(text(args, 0)?)?.components.push(component);
                Ok(())
            },
        )
        .given("instance {string} is a member of group {string}", "declare_group_membership", |ctx, args| {
            let group = text(args, 1)?.to_owned();
            ctx.draft_instance_mut(text(args, 0)?)?.groups.push(group);
            Ok(())
        })
        // -- activities
        .when("starting all instances", "start_all", |ctx, _| {
            ctx.sim()?.start_all();
            Ok(())
        })
        .when("starting instance {string}", "start_instance", |ctx, args| {
            let id = text(args, 0)?.to_owned();
            Ok(ctx.sim()?.start_instance(&id)?)
        })
        .when("stopping instance {string}", "stop_instance", |ctx, args| {
            let id = text(args, 0)?.to_owned();
            Ok(ctx.sim()?.stop_instance(&id)?)
        })
        .when("starting the network connection {string}", "start_connection", |ctx, args| {
            let conn = parse_connection(text(args, 0)?)?;
            Ok(ctx.sim()?.start_connection(&conn.source, &conn.target)?)
        })
        .when("waiting {duration}", "wait", |ctx, args| {
            let ms = u64::try_from(duration(args, 0)?.as_millis()).unwrap_or(u64::MAX);
            ctx.sim()?.advance(ms);
            Ok(())
        })
        .when("executing workflow {string} with steps {string}", "execute_workflow", |ctx, args| {
            run_workflow(ctx, args, WorkflowExpectation::Success)
        })
        .when(
            "executing workflow {string} with steps {string} expecting intentional failure",
            "execute_workflow_expecting_failure",
            |ctx, args| run_workflow(ctx, args, WorkflowExpectation::IntentionalFailure),
        )
        .when("setting the access of component {string} on {string} to {word}", "set_access", |ctx, args| {
            let access = parse_access(text(args, 2)?)?;
            let (component, owner) = (text(args, 0)?.to_owned(), text(args, 1)?.to_owned());
            Ok(ctx.sim()?.set_component_access(&owner, &component, access)?)
        })
        .when(
            "setting the access of component {string} on {string} to group {string}",
            "set_access_group",
            |ctx, args| {
                let access = Access::Group(text(args, 2)?.to_owned());
                let (component, owner) = (text(args, 0)?.to_owned(), text(args, 1)?.to_owned());
                Ok(ctx.sim()?.set_component_access(&owner, &component, access)?)
            },
        )
        .when("killing instance {string}", "kill_instance", |ctx, args| {
            let fault = Fault::KillInstance(text(args, 0)?.to_owned());
            Ok(ctx.sim()?.inject_fault(&fault)?)
        })
        .when("severing the network connection {string}", "sever_connection", |ctx, args| {
            let conn = parse_connection(text(args, 0)?)?;
            let fault = Fault::SeverConnection { source: conn.source, target: conn.target };
            Ok(ctx.sim()?.inject_fault(&fault)?)
        })
        // -- outcomes
        .then(
            "all auto-start network connections should be ready within {duration}",
            "await_autostart_ready",
            |ctx, args| {
                ctx.await_condition(
                    duration(args, 0)?,
                    "all auto-start connections connected",
                    NetSim::autostart_ready,
                    |sim| {
                        let auto: Vec<_> = sim.connections().iter().filter(|c| c.spec.auto_start).collect();
                        let ready = auto.iter().filter(|c| c.state == crate::netsim::ConnectionState::Connected).count();
                        format!("{ready} of {} connected", auto.len())
                    },
                )
            },
        )
        .then("the visible network of {string} should consist of {names}", "assert_visible_network", |ctx, args| {
            let id = text(args, 0)?.to_owned();
            let expected: BTreeSet<String> = names(args, 1)?.iter().cloned().collect();
            let actual = ctx.sim()?.visible_network(&id)?;
            if actual == expected {
                return Ok(());
            }
            Err(StepFailure::assertion(format_set(&expected), format_set(&actual), format!("visible network of {id}")))
        })
        .then("all instances should be running within {duration}", "await_all_running", |ctx, args| {
            ctx.await_condition(
                duration(args, 0)?,
                "all instances Running",
                |sim| sim.instance_ids().all(|id| sim.state(id) == Ok(InstanceState::Running)),
                |sim| {
                    let not: Vec<String> = sim
                        .instance_ids()
                        .filter(|id| sim.state(id) != Ok(InstanceState::Running))
                        .map(|id| format!("{id}: {}", sim.state(id).map(|s| s.to_string()).unwrap_or_default()))
                        .collect();
                    not.join(", ")
                },
            )
        })
        .then("instance {string} should be {word}", "assert_instance_state", |ctx, args| {
            let id = text(args, 0)?.to_owned();
            let expected = parse_state(text(args, 1)?)?;
            let actual = ctx.sim()?.state(&id)?;
            if actual == expected {
                return Ok(());
            }
            Err(StepFailure::assertion(expected.to_string(), actual.to_string(), format!("state of {id}")))
        })
        .then("instance {string} should be {word} within {duration}", "await_instance_state", |ctx, args| {
            let id = text(args, 0)?.to_owned();
            let expected = parse_state(text(args, 1)?)?;
            ctx.sim()?.instance(&id)?;
            ctx.await_condition(
                duration(args, 2)?,
                &expected.to_string(),
                |sim| sim.state(&id) == Ok(expected),
                |sim| sim.state(&id).map(|s| s.to_string()).unwrap_or_default(),
            )
        })
        .then(
            "the command line parameter {string} should have taken effect on {string}",
            "assert_cli_param_effect",
            |ctx, args| {
                let (param, id) = (text(args, 0)?.to_owned(), text(args, 1)?.to_owned());
                let sim = ctx.sim()?;
                let declared = sim.instance(&id)?.spec.cli_params.contains(&param);
                let applied = !sim.query_logs(&id, LogLevel::Info, &format!("applied command line parameter {param}"))?.is_empty();
                if declared && applied {
                    return Ok(());
                }
                let actual = if !declared {
                    "parameter not passed to the instance"
                } else {
                    "parameter ignored or instance not started"
                };
                Err(StepFailure::assertion("parameter applied at startup", actual, format!("{param} on {id}")))
            },
        )
        .then("instance {string} should run in headless mode", "assert_headless", |ctx, args| {
            let id = text(args, 0)?.to_owned();
            let headless = ctx.sim()?.instance(&id)?.runtime.headless;
            if headless {
                return Ok(());
            }
            Err(StepFailure::assertion("headless", "gui", format!("ui mode of {id}")))
        })
        .then("the workflow {string} should have ended as expected", "assert_workflow_verdict", |ctx, args| {
            let record = ctx.workflow(text(args, 0)?)?;
            if record.as_expected() {
                return Ok(());
            }
            let expected = match record.spec.expected {
                WorkflowExpectation::Success => "success",
                WorkflowExpectation::IntentionalFailure => "intentional failure",
            };
            Err(StepFailure::assertion(expected, describe_outcome(&record.outcome), format!("workflow {}", record.spec.name)))
        })
        .then("the workflow {string} should have succeeded", "assert_workflow_succeeded", |ctx, args| {
            let record = ctx.workflow(text(args, 0)?)?;
            if record.outcome == WorkflowOutcome::Success {
                return Ok(());
            }
            Err(StepFailure::assertion("success", describe_outcome(&record.outcome), format!("workflow {}", record.spec.name)))
        })
        .then("the workflow {string} should have failed at step {int}", "assert_workflow_failed_at", |ctx, args| {
            let record = ctx.workflow(text(args, 0)?)?;
            let wanted = int(args, 1)?;
            if matches!(record.outcome, WorkflowOutcome::Failure { step, .. } if step as i64 == wanted) {
                return Ok(());
            }
            Err(StepFailure::assertion(
                format!("failure at step {wanted}"),
                describe_outcome(&record.outcome),
                format!("workflow {}", record.spec.name),
            ))
        })
        .then("the component {string} of {string} should be visible to {string}", "assert_component_visible", |ctx, args| {
            component_assertion(ctx, args, true)
        })
        .then(
            "the component {string} of {string} should not be visible to {string}",
            "assert_component_hidden",
            |ctx, args| component_assertion(ctx, args, false),
        )
        .then("the log of {string} should contain {string} with level {string}", "assert_log_contains", |ctx, args| {
            let level = parse_level(text(args, 2)?)?;
            let (id, pattern) = (text(args, 0)?.to_owned(), text(args, 1)?.to_owned());
            log_assertion(ctx, &id, &pattern, level, true)
        })
        .then(
            "the log of {string} should not contain {string} with level {string}",
            "assert_log_absent",
            |ctx, args| {
                let level = parse_level(text(args, 2)?)?;
                let (id, pattern) = (text(args, 0)?.to_owned(), text(args, 1)?.to_owned());
                log_assertion(ctx, &id, &pattern, level, false)
            },
        )
        .then("the log of {string} should contain {string}", "assert_log_contains_any", |ctx, args| {
            let (id, pattern) = (text(args, 0)?.to_owned(), text(args, 1)?.to_owned());
            log_assertion(ctx, &id, &pattern, LogLevel::Info, true)
        })
        .then("the log of {string} should not contain {string}", "assert_log_absent_any", |ctx, args| {
            let (id, pattern) = (text(args, 0)?.to_owned(), text(args, 1)?.to_owned());
            log_assertion(ctx, &id, &pattern, LogLevel::Info, false)
        })
        .then("the log of {string} should contain no warnings", "assert_no_warnings", |ctx, args| {
            let id = text(args, 0)?.to_owned();
            log_assertion(ctx, &id, "", LogLevel::Warning, false)
        })
        .build()
        .expect("builtin registry is consistent")
}
