//! Step patterns and clause binding.
//!
//! A pattern template is literal text with typed capture slots:
//!
//! | slot         | matches                    | decodes to            |
//! |--------------|----------------------------|-----------------------|
//! | `{string}`   | `"any text"`               | [`ArgValue::Text`]    |
//! | `{names}`    | `"A, B, C"`                | [`ArgValue::Names`]   |
//! | `{int}`      | `-12`                      | [`ArgValue::Int`]     |
//! | `{duration}` | `20 seconds`               | [`ArgValue::Duration`]|
//! | `{word}`     | `default` (`[A-Za-z0-9_.-]+`) | [`ArgValue::Word`] |
//!
//! Whitespace in a template matches any run of whitespace in the clause.

use std::collections::HashSet;
use std::fmt;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::{normalize_and, Clause, ClauseKind, Scenario, Span};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(String);

impl ActionId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ActionId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotType {
    QuotedString,
    NameList,
    Integer,
    DurationSeconds,
    Word,
}

impl SlotType {
    fn from_placeholder(name: &str) -> Option<Self> {
        Some(match name {
            "string" => Self::QuotedString,
            "names" => Self::NameList,
            "int" => Self::Integer,
            "duration" => Self::DurationSeconds,
            "word" => Self::Word,
            _ => return None,
        })
    }

    fn regex(self) -> &'static str {
        match self {
            Self::QuotedString | Self::NameList => r#""([^"]*)""#,
            Self::Integer => r"(-?[0-9]+)",
            Self::DurationSeconds => r"([0-9]+)\s+seconds?",
            Self::Word => r"([A-Za-z0-9_.\-]+)",
        }
    }

    fn samples(self) -> &'static [&'static str] {
        match self {
            Self::QuotedString => &[r#""x""#, r#""A, B""#, r#""""#, r#""a b c""#],
            Self::NameList => &[r#""A""#, r#""A, B""#, r#""A, B , C""#],
            Self::Integer => &["7", "0", "-3"],
            Self::DurationSeconds => &["20 seconds", "1 second"],
            Self::Word => &["default", "public", "x.y-z"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArgValue {
    Text(String),
    Names(Vec<String>),
    Int(i64),
    Duration(Duration),
    Word(String),
}

impl ArgValue {
    pub fn slot_type(&self) -> SlotType {
        match self {
            Self::Text(_) => SlotType::QuotedString,
            Self::Names(_) => SlotType::NameList,
            Self::Int(_) => SlotType::Integer,
            Self::Duration(_) => SlotType::DurationSeconds,
            Self::Word(_) => SlotType::Word,
        }
    }

    /// Text of a `{string}` or `{word}` capture.
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Self::Text(s) | Self::Word(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_names(&self) -> Option<&[String]> {
        match self {
            Self::Names(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Self::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_duration(&self) -> Option<Duration> {
        match self {
            Self::Duration(d) => Some(*d),
            _ => None,
        }
    }
}

/// Splits a comma separated list and trims each element. Commas inside
/// `[...]` do not split, so `"A [relay,headless], B"` yields two elements.
pub fn split_list(text: &str) -> Result<Vec<String>, String> {
    let mut items = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for c in text.chars() {
        match c {
            '[' => {
                depth += 1;
                current.push(c);
            }
            ']' => {
                depth = depth.checked_sub(1).ok_or_else(|| format!("unbalanced `]` in `{text}`"))?;
                current.push(c);
            }
            ',' if depth == 0 => items.push(std::mem::take(&mut current)),
            _ => current.push(c),
        }
    }
    if depth != 0 {
        return Err(format!("unbalanced `[` in `{text}`"));
    }
    items.push(current);
    items
        .into_iter()
        .map(|item| {
            let item = item.trim();
            if item.is_empty() {
                Err(format!("empty element in list `{text}`"))
            } else {
                Ok(item.to_owned())
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("pattern `{template}` applies to `And`; patterns must name Given, When or Then")]
    AndKind { template: String },
    #[error("unknown placeholder `{{{placeholder}}}` in `{template}`")]
    UnknownPlaceholder { template: String, placeholder: String },
    #[error("unterminated placeholder in `{0}`")]
    Unterminated(String),
    #[error("patterns `{first}` and `{second}` both match `{sample}`")]
    Ambiguous { first: ActionId, second: ActionId, sample: String },
    #[error("invalid pattern `{template}`: {message}")]
    Invalid { template: String, message: String },
}

#[derive(Debug, Clone)]
pub struct StepPattern {
    kind: ClauseKind,
    template: String,
    action: ActionId,
    slots: Vec<SlotType>,
    regex: Regex,
}

impl StepPattern {
    pub fn new(kind: ClauseKind, template: &str, action: impl Into<ActionId>) -> Result<Self, PatternError> {
        if kind == ClauseKind::And {
            return Err(PatternError::AndKind { template: template.to_owned() });
        }
        let mut source = String::from("^");
        let mut slots = Vec::new();
        let mut rest = template.trim();
        while let Some(open) = rest.find('{') {
            push_literal(&mut source, &rest[..open]);
            let after = &rest[open + 1..];
            let close = after.find('}').ok_or_else(|| PatternError::Unterminated(template.to_owned()))?;
            let name = &after[..close];
            let slot = SlotType::from_placeholder(name).ok_or_else(|| PatternError::UnknownPlaceholder {
                template: template.to_owned(),
                placeholder: name.to_owned(),
            })?;
            source.push_str(slot.regex());
            slots.push(slot);
            rest = &after[close + 1..];
        }
        push_literal(&mut source, rest);
        source.push('$');
        let regex = Regex::new(&source).map_err(|e| PatternError::Invalid {
            template: template.to_owned(),
            message: e.to_string(),
        })?;
        Ok(Self { kind, template: template.trim().to_owned(), action: action.into(), slots, regex })
    }

    pub fn kind(&self) -> ClauseKind {
        self.kind
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn action(&self) -> &ActionId {
        &self.action
    }

    pub fn slots(&self) -> &[SlotType] {
        &self.slots
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.regex.is_match(text)
    }

    /// Decodes captures; `None` when the text does not match.
    pub fn captures(&self, text: &str) -> Option<Result<Vec<ArgValue>, String>> {
        let caps = self.regex.captures(text)?;
        Some(
            self.slots
                .iter()
                .enumerate()
                .map(|(i, slot)| {
                    let raw = caps.get(i + 1).map_or("", |m| m.as_str());
                    decode(*slot, raw)
                })
                .collect(),
        )
    }

    /// Synthetic clause texts that this pattern must match.
    pub fn samples(&self) -> Vec<String> {
        let rounds = self.slots.iter().map(|s| s.samples().len()).max().unwrap_or(1);
        (0..rounds)
            .map(|round| {
                let mut out = String::new();
                let mut rest = self.template.as_str();
                let mut slot = 0;
                while let Some(open) = rest.find('{') {
                    out.push_str(&rest[..open]);
                    let samples = self.slots[slot].samples();
                    out.push_str(samples[round % samples.len()]);
                    slot += 1;
                    let close = rest[open..].find('}').map_or(rest.len(), |c| open + c + 1);
                    rest = &rest[close..];
                }
                out.push_str(rest);
                out
            })
            .collect()
    }
}

fn push_literal(source: &mut String, literal: &str) {
    let mut first = true;
    // leading/trailing whitespace of a literal chunk borders a slot
    let words: Vec<&str> = literal.split_whitespace().collect();
    if literal.starts_with(char::is_whitespace) && !words.is_empty() {
        source.push_str(r"\s+");
    }
    for word in &words {
        if !first {
            source.push_str(r"\s+");
        }
        source.push_str(&regex::escape(word));
        first = false;
    }
    if literal.ends_with(char::is_whitespace) || (words.is_empty() && !literal.is_empty()) {
        source.push_str(r"\s+");
    }
}

fn decode(slot: SlotType, raw: &str) -> Result<ArgValue, String> {
    match slot {
        SlotType::QuotedString => Ok(ArgValue::Text(raw.to_owned())),
        SlotType::NameList => split_list(raw).map(ArgValue::Names),
        SlotType::Integer => raw.parse().map(ArgValue::Int).map_err(|e| format!("invalid integer `{raw}`: {e}")),
        SlotType::DurationSeconds => raw
            .parse()
            .map(|s| ArgValue::Duration(Duration::from_secs(s)))
            .map_err(|e| format!("invalid duration `{raw}`: {e}")),
        SlotType::Word => Ok(ArgValue::Word(raw.to_owned())),
    }
}

/// A set of step patterns with no two same-kind patterns matching the same text.
#[derive(Debug, Clone, Default)]
pub struct PatternSet {
    patterns: Vec<StepPattern>,
}

impl PatternSet {
    /// Builds the set, rejecting patterns that overlap on any synthetic sample.
    pub fn new(patterns: Vec<StepPattern>) -> Result<Self, PatternError> {
        for (i, a) in patterns.iter().enumerate() {
            for sample in a.samples() {
                if !a.is_match(&sample) {
                    return Err(PatternError::Invalid {
                        template: a.template.clone(),
                        message: format!("does not match its own sample `{sample}`"),
                    });
                }
                for (j, b) in patterns.iter().enumerate() {
                    if i != j && a.kind == b.kind && b.is_match(&sample) {
                        return Err(PatternError::Ambiguous {
                            first: a.action.clone(),
                            second: b.action.clone(),
                            sample,
                        });
                    }
                }
            }
        }
        Ok(Self { patterns })
    }

    pub fn patterns(&self) -> &[StepPattern] {
        &self.patterns
    }

    pub fn actions(&self) -> HashSet<&ActionId> {
        self.patterns.iter().map(|p| &p.action).collect()
    }

    pub fn bind_clause(&self, clause: &Clause) -> Result<BoundStep, BindError> {
        let mut found: Option<(&StepPattern, Vec<ArgValue>)> = None;
        for pattern in self.patterns.iter().filter(|p| p.kind == clause.kind) {
            let Some(args) = pattern.captures(&clause.text) else { continue };
            let args = args.map_err(|message| BindError::InvalidArgument {
                text: clause.text.clone(),
                span: clause.span,
                message,
            })?;
            if let Some((first, _)) = &found {
                return Err(BindError::AmbiguousStep {
                    text: clause.text.clone(),
                    span: clause.span,
                    actions: vec![first.action.clone(), pattern.action.clone()],
                });
            }
            found = Some((pattern, args));
        }
        let (pattern, args) = found.ok_or_else(|| BindError::UnboundStep {
            kind: clause.kind,
            text: clause.text.clone(),
            span: clause.span,
        })?;
        Ok(BoundStep { action: pattern.action.clone(), args, origin: clause.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundStep {
    pub action: ActionId,
    pub args: Vec<ArgValue>,
    pub origin: Clause,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindError {
    #[error("line {}: no step matches `{kind} {text}`", span.line)]
    UnboundStep { kind: ClauseKind, text: String, span: Span },
    #[error("line {}: `{text}` matches several steps: {actions:?}", span.line)]
    AmbiguousStep { text: String, span: Span, actions: Vec<ActionId> },
    #[error("line {}: `{text}`: {message}", span.line)]
    InvalidArgument { text: String, span: Span, message: String },
}

impl BindError {
    pub fn span(&self) -> Span {
        match self {
            Self::UnboundStep { span, .. } | Self::AmbiguousStep { span, .. } | Self::InvalidArgument { span, .. } => {
                *span
            }
        }
    }
}

/// Binds every clause of the (normalized) scenario to exactly one pattern.
pub fn bind_steps(scenario: &Scenario, patterns: &PatternSet) -> Result<Vec<BoundStep>, BindError> {
    let scenario = normalize_and(scenario.clone());
    scenario.clauses.iter().map(|c| patterns.bind_clause(c)).collect()
}

/// Like [`bind_steps`] but reports the index of the clause that failed.
pub fn bind_steps_indexed(
    scenario: &Scenario,
    patterns: &PatternSet,
) -> Result<Vec<BoundStep>, (usize, BindError)> {
    let scenario = normalize_and(scenario.clone());
    scenario
        .clauses
        .iter()
        .enumerate()
        .map(|(i, c)| patterns.bind_clause(c).map_err(|e| (i, e)))
        .collect()
}
