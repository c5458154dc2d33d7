//! Declarative network description and its text grammar.
//!
//! Connections are written `Source->Target [flag{,flag}]`, separated by
//! commas; the only connection flag is `autoStart`. Instances are written
//! `Name [flag{,flag}]` with the instance flags `relay` and `headless`.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::NetSimError;
use crate::lang::split_list;

pub type InstanceId = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionSpec {
    pub source: InstanceId,
    pub target: InstanceId,
    pub auto_start: bool,
}

impl ConnectionSpec {
    pub fn new(source: impl Into<String>, target: impl Into<String>, auto_start: bool) -> Self {
        Self { source: source.into(), target: target.into(), auto_start }
    }

    pub fn touches(&self, id: &str) -> bool {
        self.source == id || self.target == id
    }

    pub fn other(&self, id: &str) -> Option<&str> {
        if self.source == id {
            Some(&self.target)
        } else if self.target == id {
            Some(&self.source)
        } else {
            None
        }
    }
}

impl fmt::Display for ConnectionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.source, self.target)?;
        if self.auto_start {
            f.write_str(" [autoStart]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Access {
    Public,
    Private,
    Group(String),
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Public => f.write_str("public"),
            Self::Private => f.write_str("private"),
            Self::Group(g) => write!(f, "group {g}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentDecl {
    pub name: String,
    pub access: Access,
}

impl ComponentDecl {
    pub fn new(name: impl Into<String>, access: Access) -> Self {
        Self { name: name.into(), access }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub id: InstanceId,
    pub build: String,
    pub relay: bool,
    pub headless: bool,
    pub cli_params: Vec<String>,
    pub components: Vec<ComponentDecl>,
    /// Authorization group membership tokens.
    pub groups: Vec<String>,
    pub connections: Vec<ConnectionSpec>,
}

impl InstanceSpec {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            build: "default".into(),
            relay: false,
            headless: false,
            cli_params: Vec::new(),
            components: Vec::new(),
            groups: Vec::new(),
            connections: Vec::new(),
        }
    }

    pub fn with_relay(mut self, relay: bool) -> Self {
        self.relay = relay;
        self
    }

    pub fn with_component(mut self, name: &str, access: Access) -> Self {
        self.components.push(ComponentDecl::new(name, access));
        self
    }

    pub fn with_group(mut self, group: &str) -> Self {
        self.groups.push(group.into());
        self
    }

    pub fn connect_to(mut self, target: &str, auto_start: bool) -> Self {
        let conn = ConnectionSpec::new(self.id.clone(), target, auto_start);
        self.connections.push(conn);
        self
    }

    pub fn component(&self, name: &str) -> Option<&ComponentDecl> {
        self.components.iter().find(|c| c.name == name)
    }
}

fn split_flags(item: &str) -> Result<(&str, Vec<&str>), NetSimError> {
    let item = item.trim();
    let Some(open) = item.find('[') else {
        return Ok((item, Vec::new()));
    };
    let head = item[..open].trim();
    let rest = &item[open + 1..];
    let close = rest
        .find(']')
        .filter(|&c| rest[c + 1..].trim().is_empty())
        .ok_or_else(|| NetSimError::Grammar(format!("malformed flags in `{item}`")))?;
    let flags: Vec<&str> = rest[..close].split(',').map(str::trim).collect();
    if flags.iter().any(|f| f.is_empty()) {
        return Err(NetSimError::Grammar(format!("empty flag in `{item}`")));
    }
    Ok((head, flags))
}

fn check_name(name: &str, item: &str) -> Result<(), NetSimError> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace() || "[],\"".contains(c)) || name.contains("->") {
        return Err(NetSimError::Grammar(format!("invalid instance name in `{item}`")));
    }
    Ok(())
}

pub fn parse_connection(item: &str) -> Result<ConnectionSpec, NetSimError> {
    let (head, flags) = split_flags(item)?;
    let (source, target) = head
        .split_once("->")
        .ok_or_else(|| NetSimError::Grammar(format!("expected `Source->Target` in `{item}`")))?;
    let (source, target) = (source.trim(), target.trim());
    check_name(source, item)?;
    check_name(target, item)?;
    let mut auto_start = false;
    for flag in flags {
        match flag {
            "autoStart" => auto_start = true,
            other => return Err(NetSimError::Grammar(format!("unknown connection flag `{other}`"))),
        }
    }
    Ok(ConnectionSpec::new(source, target, auto_start))
}

/// Parses a comma separated connection list such as
/// `NodeA->NodeC [autoStart], NodeB->NodeC [autoStart]`.
pub fn parse_connections(text: &str) -> Result<Vec<ConnectionSpec>, NetSimError> {
    split_list(text)
        .map_err(NetSimError::Grammar)?
        .iter()
        .map(|item| parse_connection(item))
        .collect()
}

pub fn format_connections(connections: &[ConnectionSpec]) -> String {
    connections.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// One element of an instance declaration list, e.g. `NodeC [relay]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceDecl {
    pub id: InstanceId,
    pub relay: bool,
    pub headless: bool,
}

impl fmt::Display for InstanceDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)?;
        let flags: Vec<&str> = [(self.relay, "relay"), (self.headless, "headless")]
            .into_iter()
            .filter_map(|(on, name)| on.then_some(name))
            .collect();
        if !flags.is_empty() {
            write!(f, " [{}]", flags.join(","))?;
        }
        Ok(())
    }
}

pub fn parse_instance_decl(item: &str) -> Result<InstanceDecl, NetSimError> {
    let (name, flags) = split_flags(item)?;
    check_name(name, item)?;
    let mut decl = InstanceDecl { id: name.to_owned(), relay: false, headless: false };
    for flag in flags {
        match flag {
            "relay" => decl.relay = true,
            "headless" => decl.headless = true,
            other => return Err(NetSimError::Grammar(format!("unknown instance flag `{other}`"))),
        }
    }
    Ok(decl)
}
