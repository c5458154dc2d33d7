//! Deterministic simulation of a network of application instances.
//!
//! Time is a virtual millisecond clock that only moves through
//! [`NetSim::advance`]. Started instances become `Running` `startup_ms`
//! after [`NetSim::start_all`]; an eligible connection (auto-start, or
//! explicitly requested) whose endpoints are both running begins connecting
//! and becomes `Connected` `connect_ms` later.
//!
//! # Snapshot format
//!
//! [`NetSim::snapshot_json`] emits pretty-printed JSON:
//!
//! ```text
//! {
//!   "schema": "relkit.netsim.v1",
//!   "clock_ms": <u64>,
//!   "latency": { "startup_ms": <u64>, "connect_ms": <u64> },
//!   "instances": {                       // keyed by id, sorted
//!     "<id>": {
//!       "spec": { "id", "build", "relay", "headless", "cli_params",
//!                 "components": [{ "name", "access" }], "groups",
//!                 "connections": [{ "source", "target", "auto_start" }] },
//!       "runtime": { "state": "Stopped|Starting|Running|Failed",
//!                    "startup_deadline_ms": <u64|null>, "headless": <bool>,
//!                    "log": [{ "level": "Info|Warning|Error", "message", "at_ms" }] }
//!     }
//!   },
//!   "connections": [{ "spec": {...}, "state": "Idle|Connecting|Connected|Severed",
//!                     "requested": <bool>, "ready_at_ms": <u64|null> }]
//! }
//! ```
//!
//! `access` serializes as `"Public"`, `"Private"` or `{"Group": "<name>"}`.

mod spec;

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use spec::{
    format_connections, parse_connection, parse_connections, parse_instance_decl, Access, ComponentDecl,
    ConnectionSpec, InstanceDecl, InstanceId, InstanceSpec,
};

pub const SNAPSHOT_SCHEMA: &str = "relkit.netsim.v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetSimError {
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("connection {from}->{target} targets an unknown instance")]
    UnknownTarget { from: String, target: String },
    #[error("instance `{0}` cannot connect to itself")]
    SelfConnection(String),
    #[error("connection {from}->{target} is declared twice")]
    DuplicateConnection { from: String, target: String },
    #[error("connection {from}->{target} is listed on instance `{owner}`")]
    ForeignConnection { owner: String, from: String, target: String },
    #[error("component `{component}` is declared twice on `{instance}`")]
    DuplicateComponent { instance: String, component: String },
    #[error("group name is empty on component `{component}` of `{instance}`")]
    EmptyGroup { instance: String, component: String },
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("unknown component `{component}` on `{instance}`")]
    UnknownComponent { instance: String, component: String },
    #[error("unknown connection {from}->{target}")]
    UnknownConnection { from: String, target: String },
    #[error("{0}")]
    Grammar(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latency {
    pub startup_ms: u64,
    pub connect_ms: u64,
}

impl Default for Latency {
    fn default() -> Self {
        Self { startup_ms: 1000, connect_ms: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstanceState {
    Stopped,
    Starting,
    Running,
    Failed,
}

impl fmt::Display for InstanceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LogLevel {
    Info,
    Warning,
    Error,
}

impl std::str::FromStr for LogLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "info" => Ok(Self::Info),
            "warning" | "warn" => Ok(Self::Warning),
            "error" => Ok(Self::Error),
            _ => Err(format!("unknown log level `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub level: LogLevel,
    pub message: String,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRuntime {
    pub state: InstanceState,
    pub startup_deadline_ms: Option<u64>,
    pub headless: bool,
    pub log: Vec<LogEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub spec: InstanceSpec,
    pub runtime: InstanceRuntime,
}

impl Instance {
    fn log(&mut self, level: LogLevel, at_ms: u64, message: impl Into<String>) {
        self.runtime.log.push(LogEntry { level, message: message.into(), at_ms });
    }

    fn fails_startup(&self) -> bool {
        self.spec.cli_params.iter().any(|p| p == "--fail-startup")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConnectionState {
    Idle,
    Connecting,
    Connected,
    Severed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionRuntime {
    pub spec: ConnectionSpec,
    pub state: ConnectionState,
    /// Set by [`NetSim::start_connection`] for connections without `autoStart`.
    pub requested: bool,
    pub ready_at_ms: Option<u64>,
}

impl ConnectionRuntime {
    fn eligible(&self) -> bool {
        self.state == ConnectionState::Idle && (self.spec.auto_start || self.requested)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    KillInstance(InstanceId),
    SeverConnection { source: InstanceId, target: InstanceId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowStep {
    pub instance: InstanceId,
    pub component: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkflowExpectation {
    Success,
    IntentionalFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowSpec {
    pub name: String,
    pub steps: Vec<WorkflowStep>,
    pub expected: WorkflowExpectation,
}

impl WorkflowSpec {
    /// Parses steps written as `Instance/Component, Instance/Component`.
    pub fn parse(name: &str, steps: &str, expected: WorkflowExpectation) -> Result<Self, NetSimError> {
        let steps = crate::lang::split_list(steps)
            .map_err(NetSimError::Grammar)?
            .into_iter()
            .map(|item| {
                let (instance, component) = item
                    .split_once('/')
                    .map(|(i, c)| (i.trim(), c.trim()))
                    .filter(|(i, c)| !i.is_empty() && !c.is_empty())
                    .ok_or_else(|| NetSimError::Grammar(format!("expected `Instance/Component`, got `{item}`")))?;
                Ok(WorkflowStep { instance: instance.to_owned(), component: component.to_owned() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { name: name.to_owned(), steps, expected })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkflowFailure {
    UnknownInstance,
    InstanceNotRunning,
    UnknownComponent,
    NotVisible,
    EmptyWorkflow,
}

impl fmt::Display for WorkflowFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::UnknownInstance => "unknown instance",
            Self::InstanceNotRunning => "instance not running",
            Self::UnknownComponent => "unknown component",
            Self::NotVisible => "component not visible",
            Self::EmptyWorkflow => "workflow has no steps",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkflowOutcome {
    Success,
    Failure { step: usize, reason: WorkflowFailure },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSim {
    schema: String,
    clock_ms: u64,
    latency: Latency,
    instances: BTreeMap<InstanceId, Instance>,
    connections: Vec<ConnectionRuntime>,
}

impl NetSim {
    /// Validates the specs and builds a network with everything stopped and idle.
    pub fn provision(specs: Vec<InstanceSpec>, latency: Latency) -> Result<Self, NetSimError> {
        let mut instances = BTreeMap::new();
        let mut connections = Vec::new();
        for spec in &specs {
            if instances.contains_key(&spec.id) {
                return Err(NetSimError::DuplicateId(spec.id.clone()));
            }
            let mut names = HashSet::new();
            for c in &spec.components {
                if !names.insert(&c.name) {
                    return Err(NetSimError::DuplicateComponent {
                        instance: spec.id.clone(),
                        component: c.name.clone(),
                    });
                }
                if matches!(&c.access, Access::Group(g) if g.is_empty()) {
                    return Err(NetSimError::EmptyGroup { instance: spec.id.clone(), component: c.name.clone() });
                }
            }
            let runtime = InstanceRuntime {
                state: InstanceState::Stopped,
                startup_deadline_ms: None,
                headless: spec.headless,
                log: Vec::new(),
            };
            instances.insert(spec.id.clone(), Instance { spec: spec.clone(), runtime });
        }
        let mut pairs = HashSet::new();
        for spec in &specs {
            for conn in &spec.connections {
                if conn.source != spec.id {
                    return Err(NetSimError::ForeignConnection {
                        owner: spec.id.clone(),
                        from: conn.source.clone(),
                        target: conn.target.clone(),
                    });
                }
                if conn.source == conn.target {
                    return Err(NetSimError::SelfConnection(conn.source.clone()));
                }
                if !instances.contains_key(&conn.target) {
                    return Err(NetSimError::UnknownTarget {
                        from: conn.source.clone(),
                        target: conn.target.clone(),
                    });
                }
                if !pairs.insert((conn.source.clone(), conn.target.clone())) {
                    return Err(NetSimError::DuplicateConnection {
                        from: conn.source.clone(),
                        target: conn.target.clone(),
                    });
                }
                connections.push(ConnectionRuntime {
                    spec: conn.clone(),
                    state: ConnectionState::Idle,
                    requested: false,
                    ready_at_ms: None,
                });
            }
        }
        Ok(Self { schema: SNAPSHOT_SCHEMA.into(), clock_ms: 0, latency, instances, connections })
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn latency(&self) -> Latency {
        self.latency
    }

    pub fn instance_ids(&self) -> impl Iterator<Item = &str> {
        self.instances.keys().map(String::as_str)
    }

    pub fn instance(&self, id: &str) -> Result<&Instance, NetSimError> {
        self.instances.get(id).ok_or_else(|| NetSimError::UnknownInstance(id.to_owned()))
    }

    fn instance_mut(&mut self, id: &str) -> Result<&mut Instance, NetSimError> {
        self.instances.get_mut(id).ok_or_else(|| NetSimError::UnknownInstance(id.to_owned()))
    }

    pub fn state(&self, id: &str) -> Result<InstanceState, NetSimError> {
        Ok(self.instance(id)?.runtime.state)
    }

    pub fn connections(&self) -> &[ConnectionRuntime] {
        &self.connections
    }

    pub fn connection(&self, source: &str, target: &str) -> Result<&ConnectionRuntime, NetSimError> {
        self.connection_index(source, target).map(|i| &self.connections[i])
    }

    fn connection_index(&self, source: &str, target: &str) -> Result<usize, NetSimError> {
        self.connections
            .iter()
            .position(|c| c.spec.source == source && c.spec.target == target)
            .ok_or_else(|| NetSimError::UnknownConnection { from: source.into(), target: target.into() })
    }

    fn is_running(&self, id: &str) -> bool {
        self.instances.get(id).is_some_and(|i| i.runtime.state == InstanceState::Running)
    }

    /// Every auto-start connection is connected. Vacuously true without any.
    pub fn autostart_ready(&self) -> bool {
        self.connections
            .iter()
            .filter(|c| c.spec.auto_start)
            .all(|c| c.state == ConnectionState::Connected)
    }

    /// Moves every stopped instance to `Starting`.
    pub fn start_all(&mut self) {
        let ids: Vec<String> = self
            .instances
            .iter()
            .filter(|(_, i)| i.runtime.state == InstanceState::Stopped)
            .map(|(id, _)| id.clone())
            .collect();
        for id in ids {
            self.begin_startup(&id);
        }
    }

    /// Starts one stopped or failed instance; no-op when already starting or running.
    pub fn start_instance(&mut self, id: &str) -> Result<(), NetSimError> {
        let state = self.state(id)?;
        if matches!(state, InstanceState::Stopped | InstanceState::Failed) {
            self.begin_startup(id);
        }
        Ok(())
    }

    fn begin_startup(&mut self, id: &str) {
        let now = self.clock_ms;
        let startup_ms = self.latency.startup_ms;
        let Some(inst) = self.instances.get_mut(id) else { return };
        let mut delay = 0u64;
        let mut headless = inst.spec.headless;
        let params = inst.spec.cli_params.clone();
        inst.log(LogLevel::Info, now, format!("starting instance {id} ({} build)", inst.spec.build));
        for param in &params {
            let applied = if param == "--headless" {
                headless = true;
                true
            } else if param == "--fail-startup" {
                true
            } else if let Some(ms) = param.strip_prefix("--startup-delay=").and_then(|v| v.parse::<u64>().ok()) {
                delay = delay.saturating_add(ms);
                true
            } else {
                false
            };
            if applied {
                inst.log(LogLevel::Info, now, format!("applied command line parameter {param}"));
            } else {
                inst.log(LogLevel::Warning, now, format!("ignored unknown command line parameter {param}"));
            }
        }
        inst.runtime.headless = headless;
        inst.runtime.state = InstanceState::Starting;
        inst.runtime.startup_deadline_ms = Some(now + startup_ms + delay);
    }

    /// Stops an instance and severs its active connections.
    pub fn stop_instance(&mut self, id: &str) -> Result<(), NetSimError> {
        let now = self.clock_ms;
        let inst = self.instance_mut(id)?;
        inst.runtime.state = InstanceState::Stopped;
        inst.runtime.startup_deadline_ms = None;
        inst.log(LogLevel::Info, now, "instance stopped");
        self.sever_incident(id, "stopped");
        Ok(())
    }

    /// Requests a connection that is not auto-started.
    pub fn start_connection(&mut self, source: &str, target: &str) -> Result<(), NetSimError> {
        let idx = self.connection_index(source, target)?;
        self.connections[idx].requested = true;
        self.promote_eligible_connections();
        Ok(())
    }

    /// Advances the virtual clock by `ms`, applying every promotion that
    /// falls due on the way in time order.
    pub fn advance(&mut self, ms: u64) {
        let target = self.clock_ms.saturating_add(ms);
        self.promote_eligible_connections();
        while let Some(at) = self.next_event().filter(|&t| t <= target) {
            self.clock_ms = at;
            self.apply_due_startups();
            self.apply_due_connections();
            self.promote_eligible_connections();
        }
        self.clock_ms = target;
    }

    fn next_event(&self) -> Option<u64> {
        let startups = self
            .instances
            .values()
            .filter(|i| i.runtime.state == InstanceState::Starting)
            .filter_map(|i| i.runtime.startup_deadline_ms);
        let connects = self
            .connections
            .iter()
            .filter(|c| c.state == ConnectionState::Connecting)
            .filter_map(|c| c.ready_at_ms);
        startups.chain(connects).min()
    }

    fn apply_due_startups(&mut self) {
        let now = self.clock_ms;
        for inst in self.instances.values_mut() {
            if inst.runtime.state != InstanceState::Starting || inst.runtime.startup_deadline_ms != Some(now) {
                continue;
            }
            inst.runtime.startup_deadline_ms = None;
            if inst.fails_startup() {
                inst.runtime.state = InstanceState::Failed;
                inst.log(LogLevel::Error, now, "startup failed");
            } else {
                inst.runtime.state = InstanceState::Running;
                inst.log(LogLevel::Info, now, "instance started");
            }
        }
    }

    fn apply_due_connections(&mut self) {
        let now = self.clock_ms;
        for idx in 0..self.connections.len() {
            let conn = &self.connections[idx];
            if conn.state != ConnectionState::Connecting || conn.ready_at_ms != Some(now) {
                continue;
            }
            let (source, target) = (conn.spec.source.clone(), conn.spec.target.clone());
            if self.is_running(&source) && self.is_running(&target) {
                self.connections[idx].state = ConnectionState::Connected;
                for (me, peer) in [(&source, &target), (&target, &source)] {
                    if let Some(inst) = self.instances.get_mut(me) {
                        inst.log(LogLevel::Info, now, format!("connected to {peer}"));
                    }
                }
            } else {
                self.connections[idx].state = ConnectionState::Idle;
                self.connections[idx].ready_at_ms = None;
            }
        }
    }

    fn promote_eligible_connections(&mut self) {
        let now = self.clock_ms;
        let connect_ms = self.latency.connect_ms;
        for idx in 0..self.connections.len() {
            let conn = &self.connections[idx];
            if !conn.eligible() || !self.is_running(&conn.spec.source) || !self.is_running(&conn.spec.target) {
                continue;
            }
            let (source, target) = (conn.spec.source.clone(), conn.spec.target.clone());
            self.connections[idx].state = ConnectionState::Connecting;
            self.connections[idx].ready_at_ms = Some(now + connect_ms);
            if let Some(inst) = self.instances.get_mut(&source) {
                inst.log(LogLevel::Info, now, format!("connecting to {target}"));
            }
        }
    }

    fn sever_incident(&mut self, id: &str, why: &str) {
        let now = self.clock_ms;
        for idx in 0..self.connections.len() {
            let conn = &self.connections[idx];
            if !conn.spec.touches(id)
                || !matches!(conn.state, ConnectionState::Connected | ConnectionState::Connecting)
            {
                continue;
            }
            let peer = conn.spec.other(id).unwrap_or_default().to_owned();
            self.connections[idx].state = ConnectionState::Severed;
            self.connections[idx].ready_at_ms = None;
            if let Some(inst) = self.instances.get_mut(&peer) {
                inst.log(LogLevel::Warning, now, format!("connection to {id} lost ({why})"));
            }
        }
    }

    pub fn inject_fault(&mut self, fault: &Fault) -> Result<(), NetSimError> {
        let now = self.clock_ms;
        match fault {
            Fault::KillInstance(id) => {
                let inst = self.instance_mut(id)?;
                inst.runtime.state = InstanceState::Failed;
                inst.runtime.startup_deadline_ms = None;
                inst.log(LogLevel::Error, now, "instance killed");
                self.sever_incident(id, "killed");
            }
            Fault::SeverConnection { source, target } => {
                let idx = self.connection_index(source, target)?;
                self.connections[idx].state = ConnectionState::Severed;
                self.connections[idx].ready_at_ms = None;
                for id in [source, target] {
                    if let Some(inst) = self.instances.get_mut(id) {
                        inst.log(LogLevel::Warning, now, format!("connection {source}->{target} severed"));
                    }
                }
            }
        }
        Ok(())
    }

    /// `id` itself plus every instance reachable over connected links, where
    /// the search continues past an intermediate instance only if it relays.
    pub fn visible_network(&self, id: &str) -> Result<BTreeSet<InstanceId>, NetSimError> {
        self.instance(id)?;
        let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for conn in self.connections.iter().filter(|c| c.state == ConnectionState::Connected) {
            adjacency.entry(&conn.spec.source).or_default().push(&conn.spec.target);
            adjacency.entry(&conn.spec.target).or_default().push(&conn.spec.source);
        }
        let mut visible = BTreeSet::from([id.to_owned()]);
        let mut expanded = HashSet::from([id]);
        let mut queue = VecDeque::from([id]);
        while let Some(node) = queue.pop_front() {
            for &peer in adjacency.get(node).into_iter().flatten() {
                visible.insert(peer.to_owned());
                let relays = self.instances.get(peer).is_some_and(|i| i.spec.relay);
                if relays && expanded.insert(peer) {
                    queue.push_back(peer);
                }
            }
        }
        Ok(visible)
    }

    pub fn set_component_access(&mut self, id: &str, component: &str, access: Access) -> Result<(), NetSimError> {
        let now = self.clock_ms;
        if matches!(&access, Access::Group(g) if g.is_empty()) {
            return Err(NetSimError::EmptyGroup { instance: id.into(), component: component.into() });
        }
        let inst = self.instance_mut(id)?;
        let decl = inst
            .spec
            .components
            .iter_mut()
            .find(|c| c.name == component)
            .ok_or_else(|| NetSimError::UnknownComponent { instance: id.into(), component: component.into() })?;
        decl.access = access.clone();
        inst.log(LogLevel::Info, now, format!("access of component {component} set to {access}"));
        Ok(())
    }

    fn access_allows(&self, owner: &Instance, decl: &ComponentDecl, viewer: &Instance) -> bool {
        owner.spec.id == viewer.spec.id
            || match &decl.access {
                Access::Public => true,
                Access::Private => false,
                Access::Group(g) => viewer.spec.groups.iter().any(|m| m == g),
            }
    }

    /// `(owner, component)` pairs the viewer may use.
    pub fn visible_components(&self, viewer: &str) -> Result<BTreeSet<(InstanceId, String)>, NetSimError> {
        let viewer_inst = self.instance(viewer)?;
        let mut out = BTreeSet::new();
        for owner in self.visible_network(viewer)? {
            let owner_inst = self.instance(&owner)?;
            for decl in &owner_inst.spec.components {
                if self.access_allows(owner_inst, decl, viewer_inst) {
                    out.insert((owner.clone(), decl.name.clone()));
                }
            }
        }
        Ok(out)
    }

    pub fn component_visible_to(&self, owner: &str, component: &str, viewer: &str) -> Result<bool, NetSimError> {
        let owner_inst = self.instance(owner)?;
        if owner_inst.spec.component(component).is_none() {
            return Err(NetSimError::UnknownComponent { instance: owner.into(), component: component.into() });
        }
        Ok(self.visible_components(viewer)?.contains(&(owner.to_owned(), component.to_owned())))
    }

    /// Runs the workflow steps in order. The verdict against
    /// `wf.expected` is left to the caller.
    pub fn execute_workflow(&mut self, wf: &WorkflowSpec) -> WorkflowOutcome {
        let now = self.clock_ms;
        if wf.steps.is_empty() {
            return WorkflowOutcome::Failure { step: 0, reason: WorkflowFailure::EmptyWorkflow };
        }
        let mut previous: Option<&str> = None;
        for (index, step) in wf.steps.iter().enumerate() {
            let failure = self.check_workflow_step(step, previous);
            let log_on = if self.instances.contains_key(&step.instance) { Some(step.instance.as_str()) } else { previous };
            let (level, message) = match failure {
                None => (LogLevel::Info, format!("workflow {}: step {index} ran {}", wf.name, step.component)),
                Some(reason) => (LogLevel::Error, format!("workflow {}: step {index} failed: {reason}", wf.name)),
            };
            if let Some(id) = log_on.map(str::to_owned) {
                if let Some(inst) = self.instances.get_mut(&id) {
                    inst.log(level, now, message);
                }
            }
            if let Some(reason) = failure {
                return WorkflowOutcome::Failure { step: index, reason };
            }
            previous = Some(&step.instance);
        }
        WorkflowOutcome::Success
    }

    fn check_workflow_step(&self, step: &WorkflowStep, previous: Option<&str>) -> Option<WorkflowFailure> {
        let Some(inst) = self.instances.get(&step.instance) else {
            return Some(WorkflowFailure::UnknownInstance);
        };
        if inst.runtime.state != InstanceState::Running {
            return Some(WorkflowFailure::InstanceNotRunning);
        }
        if inst.spec.component(&step.component).is_none() {
            return Some(WorkflowFailure::UnknownComponent);
        }
        if let Some(prev) = previous {
            let visible = self
                .visible_components(prev)
                .map(|set| set.contains(&(step.instance.clone(), step.component.clone())))
                .unwrap_or(false);
            if !visible {
                return Some(WorkflowFailure::NotVisible);
            }
        }
        None
    }

    /// Log entries of `id` at or above `threshold` whose message contains `pattern`.
    pub fn query_logs(&self, id: &str, threshold: LogLevel, pattern: &str) -> Result<Vec<LogEntry>, NetSimError> {
        Ok(self
            .instance(id)?
            .runtime
            .log
            .iter()
            .filter(|e| e.level >= threshold && e.message.contains(pattern))
            .cloned()
            .collect())
    }

    /// Stops every instance that is not already stopped.
    pub fn teardown(&mut self) {
        let ids: Vec<String> = self
            .instances
            .iter()
            .filter(|(_, i)| i.runtime.state != InstanceState::Stopped)
            .map(|(id, _)| id.clone())
            .collect();
        for id in ids {
            let _ = self.stop_instance(&id);
        }
    }

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn from_snapshot_json(text: &str) -> Result<Self, serde_json::Error> {
        let sim: Self = serde_json::from_str(text)?;
        if sim.schema != SNAPSHOT_SCHEMA {
            return Err(serde::de::Error::custom(format!("unsupported snapshot schema `{}`", sim.schema)));
        }
        Ok(sim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_node_net() -> NetSim {
        NetSim::provision(
            vec![
                InstanceSpec::new("NodeA").connect_to("NodeC", true),
                InstanceSpec::new("NodeB").connect_to("NodeC", true),
                InstanceSpec::new("NodeC"),
            ],
            Latency::default(),
        )
        .unwrap()
    }

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn provision_three_nodes() {
        let sim = three_node_net();
        assert_eq!(sim.clock_ms(), 0);
        assert!(sim.instance_ids().all(|id| sim.state(id).unwrap() == InstanceState::Stopped));
        assert_eq!(sim.connections().len(), 2);
        assert!(sim.connections().iter().all(|c| c.state == ConnectionState::Idle && c.spec.auto_start));
    }

    #[test]
    fn provision_errors() {
        let l = Latency::default();
        assert!(NetSim::provision(vec![], l).is_ok());
        assert_eq!(
            NetSim::provision(vec![InstanceSpec::new("A").connect_to("A", true)], l).unwrap_err(),
            NetSimError::SelfConnection("A".into())
        );
        assert_eq!(
            NetSim::provision(vec![InstanceSpec::new("A"), InstanceSpec::new("A")], l).unwrap_err(),
            NetSimError::DuplicateId("A".into())
        );
        assert!(matches!(
            NetSim::provision(vec![InstanceSpec::new("A").connect_to("Z", true)], l).unwrap_err(),
            NetSimError::UnknownTarget { .. }
        ));
        assert!(matches!(
            NetSim::provision(
                vec![InstanceSpec::new("A").connect_to("B", true).connect_to("B", false), InstanceSpec::new("B")],
                l
            )
            .unwrap_err(),
            NetSimError::DuplicateConnection { .. }
        ));
        let dup = InstanceSpec::new("A").with_component("c", Access::Public).with_component("c", Access::Private);
        assert!(matches!(NetSim::provision(vec![dup], l).unwrap_err(), NetSimError::DuplicateComponent { .. }));
    }

    #[test]
    fn startup_then_connect() {
        let mut sim = three_node_net();
        sim.start_all();
        assert!(sim.instance_ids().all(|id| sim.state(id).unwrap() == InstanceState::Starting));
        let before = sim.clone();
        sim.advance(0);
        assert_eq!(sim, before);
        sim.advance(999);
        assert_eq!(sim.state("NodeA").unwrap(), InstanceState::Starting);
        sim.advance(1);
        assert_eq!(sim.state("NodeA").unwrap(), InstanceState::Running);
        assert!(sim.connections().iter().all(|c| c.state == ConnectionState::Connecting));
        sim.advance(199);
        assert!(!sim.autostart_ready());
        sim.advance(1);
        assert!(sim.autostart_ready());
        assert_eq!(sim.clock_ms(), 1200);
    }

    #[test]
    fn manual_connection_stays_idle_until_requested() {
        let mut sim = NetSim::provision(
            vec![InstanceSpec::new("A").connect_to("B", false), InstanceSpec::new("B")],
            Latency::default(),
        )
        .unwrap();
        sim.start_all();
        sim.advance(1_000_000);
        assert_eq!(sim.connection("A", "B").unwrap().state, ConnectionState::Idle);
        assert!(sim.autostart_ready());
        sim.start_connection("A", "B").unwrap();
        assert_eq!(sim.connection("A", "B").unwrap().state, ConnectionState::Connecting);
        sim.advance(200);
        assert_eq!(sim.connection("A", "B").unwrap().state, ConnectionState::Connected);
    }

    #[test]
    fn three_node_visibility_and_relay() {
        let mut sim = three_node_net();
        sim.start_all();
        sim.advance(1200);
        assert_eq!(sim.visible_network("NodeA").unwrap(), set(&["NodeA", "NodeC"]));
        assert_eq!(sim.visible_network("NodeB").unwrap(), set(&["NodeB", "NodeC"]));
        assert_eq!(sim.visible_network("NodeC").unwrap(), set(&["NodeA", "NodeB", "NodeC"]));

        let mut relayed = NetSim::provision(
            vec![
                InstanceSpec::new("NodeA").connect_to("NodeC", true),
                InstanceSpec::new("NodeB").connect_to("NodeC", true),
                InstanceSpec::new("NodeC").with_relay(true),
            ],
            Latency::default(),
        )
        .unwrap();
        relayed.start_all();
        relayed.advance(1200);
        assert_eq!(relayed.visible_network("NodeA").unwrap(), set(&["NodeA", "NodeB", "NodeC"]));
        assert!(matches!(relayed.visible_network("Nope"), Err(NetSimError::UnknownInstance(_))));
    }

    #[test]
    fn single_stopped_instance_sees_itself() {
        let sim = NetSim::provision(vec![InstanceSpec::new("X")], Latency::default()).unwrap();
        assert_eq!(sim.visible_network("X").unwrap(), set(&["X"]));
    }

    #[test]
    fn kill_severs_and_logs() {
        let mut sim = three_node_net();
        sim.start_all();
        sim.advance(1200);
        sim.inject_fault(&Fault::KillInstance("NodeC".into())).unwrap();
        assert_eq!(sim.state("NodeC").unwrap(), InstanceState::Failed);
        assert_eq!(sim.visible_network("NodeA").unwrap(), set(&["NodeA"]));
        assert!(sim.connections().iter().all(|c| c.state == ConnectionState::Severed));
        assert_eq!(sim.query_logs("NodeA", LogLevel::Warning, "lost").unwrap().len(), 1);
        assert!(sim.inject_fault(&Fault::KillInstance("Q".into())).is_err());
    }

    #[test]
    fn sever_connection() {
        let mut sim = three_node_net();
        sim.start_all();
        sim.advance(1200);
        let fault = Fault::SeverConnection { source: "NodeA".into(), target: "NodeC".into() };
        sim.inject_fault(&fault).unwrap();
        assert_eq!(sim.visible_network("NodeA").unwrap(), set(&["NodeA"]));
        assert_eq!(sim.visible_network("NodeB").unwrap(), set(&["NodeB", "NodeC"]));
        assert_eq!(sim.query_logs("NodeC", LogLevel::Warning, "severed").unwrap().len(), 1);
        let reversed = Fault::SeverConnection { source: "NodeC".into(), target: "NodeA".into() };
        assert!(matches!(sim.inject_fault(&reversed), Err(NetSimError::UnknownConnection { .. })));
    }

    #[test]
    fn logs_query() {
        let mut sim = three_node_net();
        assert!(sim.query_logs("NodeA", LogLevel::Info, "x").unwrap().is_empty());
        sim.start_all();
        sim.advance(1200);
        // one "connected to" entry per established connection endpoint
        assert_eq!(sim.query_logs("NodeA", LogLevel::Info, "connected").unwrap().len(), 1);
        assert_eq!(sim.query_logs("NodeC", LogLevel::Info, "connected").unwrap().len(), 2);
        assert!(sim.query_logs("NodeA", LogLevel::Warning, "").unwrap().is_empty());
        assert!(sim.query_logs("Q", LogLevel::Info, "").is_err());
    }

    #[test]
    fn cli_params() {
        let mut a = InstanceSpec::new("A");
        a.cli_params = vec!["--headless".into(), "--bogus".into(), "--startup-delay=500".into()];
        let mut b = InstanceSpec::new("B");
        b.cli_params = vec!["--fail-startup".into()];
        let mut sim = NetSim::provision(vec![a, b], Latency::default()).unwrap();
        sim.start_all();
        assert!(sim.instance("A").unwrap().runtime.headless);
        assert_eq!(sim.query_logs("A", LogLevel::Warning, "--bogus").unwrap().len(), 1);
        sim.advance(1000);
        assert_eq!(sim.state("A").unwrap(), InstanceState::Starting);
        assert_eq!(sim.state("B").unwrap(), InstanceState::Failed);
        assert_eq!(sim.query_logs("B", LogLevel::Error, "startup failed").unwrap().len(), 1);
        sim.advance(500);
        assert_eq!(sim.state("A").unwrap(), InstanceState::Running);
    }

    #[test]
    fn component_access() {
        let mut sim = NetSim::provision(
            vec![
                InstanceSpec::new("NodeA").connect_to("NodeC", true),
                InstanceSpec::new("NodeB").connect_to("NodeC", true).with_group("wing"),
                InstanceSpec::new("NodeC")
                    .with_component("pub", Access::Public)
                    .with_component("priv", Access::Private)
                    .with_component("grp", Access::Group("wing".into())),
            ],
            Latency::default(),
        )
        .unwrap();
        sim.start_all();
        sim.advance(1200);
        assert!(sim.component_visible_to("NodeC", "pub", "NodeA").unwrap());
        assert!(sim.component_visible_to("NodeC", "pub", "NodeB").unwrap());
        assert!(!sim.component_visible_to("NodeC", "priv", "NodeA").unwrap());
        assert!(sim.component_visible_to("NodeC", "priv", "NodeC").unwrap());
        assert!(!sim.component_visible_to("NodeC", "grp", "NodeA").unwrap());
        assert!(sim.component_visible_to("NodeC", "grp", "NodeB").unwrap());
        let log_len = sim.instance("NodeC").unwrap().runtime.log.len();
        sim.set_component_access("NodeC", "grp", Access::Public).unwrap();
        assert_eq!(sim.instance("NodeC").unwrap().runtime.log.len(), log_len + 1);
        assert!(sim.component_visible_to("NodeC", "grp", "NodeA").unwrap());
        assert!(matches!(
            sim.set_component_access("NodeC", "nope", Access::Public),
            Err(NetSimError::UnknownComponent { .. })
        ));
        assert!(matches!(
            sim.set_component_access("Nope", "grp", Access::Public),
            Err(NetSimError::UnknownInstance(_))
        ));
    }

    #[test]
    fn workflows() {
        let mut sim = NetSim::provision(
            vec![
                InstanceSpec::new("NodeA").with_component("a", Access::Public).connect_to("NodeC", true),
                InstanceSpec::new("NodeB").with_component("b", Access::Public).connect_to("NodeC", true),
                InstanceSpec::new("NodeC").with_component("c", Access::Public),
            ],
            Latency::default(),
        )
        .unwrap();
        sim.start_all();
        sim.advance(1200);
        let ok = WorkflowSpec::parse("w", "NodeA/a", WorkflowExpectation::Success).unwrap();
        assert_eq!(sim.execute_workflow(&ok), WorkflowOutcome::Success);
        let hop = WorkflowSpec::parse("w", "NodeA/a, NodeC/c", WorkflowExpectation::Success).unwrap();
        assert_eq!(sim.execute_workflow(&hop), WorkflowOutcome::Success);
        let far = WorkflowSpec::parse("w", "NodeA/a, NodeB/b", WorkflowExpectation::Success).unwrap();
        assert_eq!(
            sim.execute_workflow(&far),
            WorkflowOutcome::Failure { step: 1, reason: WorkflowFailure::NotVisible }
        );
        let absent = WorkflowSpec::parse("w", "NodeA/zzz", WorkflowExpectation::Success).unwrap();
        assert_eq!(
            sim.execute_workflow(&absent),
            WorkflowOutcome::Failure { step: 0, reason: WorkflowFailure::UnknownComponent }
        );
        assert_eq!(sim.query_logs("NodeA", LogLevel::Error, "workflow w").unwrap().len(), 1);
        assert_eq!(sim.query_logs("NodeB", LogLevel::Error, "workflow w").unwrap().len(), 1);
        assert!(WorkflowSpec::parse("w", "NodeA", WorkflowExpectation::Success).is_err());
        sim.stop_instance("NodeA").unwrap();
        assert_eq!(
            sim.execute_workflow(&ok),
            WorkflowOutcome::Failure { step: 0, reason: WorkflowFailure::InstanceNotRunning }
        );
    }

    #[test]
    fn teardown_stops_everything() {
        let mut sim = three_node_net();
        sim.start_all();
        sim.advance(1200);
        sim.teardown();
        assert!(sim.instance_ids().all(|id| sim.state(id).unwrap() == InstanceState::Stopped));
        assert!(sim.connections().iter().all(|c| c.state != ConnectionState::Connected));
    }

    #[test]
    fn snapshot_round_trip() {
        let mut sim = three_node_net();
        sim.start_all();
        sim.advance(1300);
        let json = sim.snapshot_json();
        assert!(json.contains(SNAPSHOT_SCHEMA));
        assert_eq!(NetSim::from_snapshot_json(&json).unwrap(), sim);
    }
}
