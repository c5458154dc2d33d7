use std::fmt;

use serde::{Deserialize, Serialize};

/// A scenario tag. The stored name never carries the leading `@`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tag(String);

impl Tag {
    /// Builds a tag from a name, accepting an optional leading `@`.
    ///
    /// Returns `None` for empty names or names containing whitespace.
    pub fn new(name: impl AsRef<str>) -> Option<Self> {
        let name = name.as_ref();
        let name = name.strip_prefix('@').unwrap_or(name);
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return None;
        }
        Some(Self(name.to_owned()))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClauseKind {
    Given,
    When,
    Then,
    And,
}

impl ClauseKind {
    pub const KEYWORDS: [ClauseKind; 4] = [Self::Given, Self::When, Self::Then, Self::And];

    pub fn keyword(self) -> &'static str {
        match self {
            Self::Given => "Given",
            Self::When => "When",
            Self::Then => "Then",
            Self::And => "And",
        }
    }
}

impl fmt::Display for ClauseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// 1-based source location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Span {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

/// One Given/When/Then/And line of a scenario.
///
/// Equality is structural: the span is ignored so that a formatted file
/// compares equal to the file it was produced from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Clause {
    pub kind: ClauseKind,
    pub text: String,
    pub span: Span,
}

impl PartialEq for Clause {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.text == other.text
    }
}

impl Eq for Clause {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub tags: Vec<Tag>,
    pub title: String,
    pub clauses: Vec<Clause>,
}

impl Scenario {
    pub fn has_tag(&self, name: &str) -> bool {
        self.tags.iter().any(|t| t.name() == name)
    }

    pub fn is_normalized(&self) -> bool {
        self.clauses.iter().all(|c| c.kind != ClauseKind::And)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFile {
    pub path: String,
    pub scenarios: Vec<Scenario>,
}

/// Replaces every `And` clause's kind with the nearest preceding non-`And` kind.
///
/// A leading `And` (which the parser rejects) is left untouched.
pub fn normalize_and(mut scenario: Scenario) -> Scenario {
    let mut previous = None;
    for clause in &mut scenario.clauses {
        match clause.kind {
            ClauseKind::And => {
                if let Some(kind) = previous {
                    clause.kind = kind;
                }
            }
            kind => previous = Some(kind),
        }
    }
    scenario
}

pub fn normalize_feature(mut file: FeatureFile) -> FeatureFile {
    file.scenarios = file.scenarios.into_iter().map(normalize_and).collect();
    file
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clause(kind: ClauseKind, text: &str) -> Clause {
        Clause { kind, text: text.into(), span: Span { line: 1, column: 1 } }
    }

    fn kinds(s: &Scenario) -> Vec<ClauseKind> {
        s.clauses.iter().map(|c| c.kind).collect()
    }

    #[test]
    fn and_takes_previous_kind() {
        use ClauseKind::*;
        let s = Scenario {
            tags: vec![],
            title: "t".into(),
            clauses: vec![
                clause(Given, "a"),
                clause(And, "b"),
                clause(When, "c"),
                clause(Then, "d"),
                clause(And, "e"),
            ],
        };
        let n = normalize_and(s);
        assert_eq!(kinds(&n), vec![Given, Given, When, Then, Then]);
        assert!(n.is_normalized());
    }

    #[test]
    fn no_and_is_identity() {
        use ClauseKind::*;
        let s = Scenario {
            tags: vec![Tag::new("x").unwrap()],
            title: "t".into(),
            clauses: vec![clause(Given, "a"), clause(Then, "b")],
        };
        assert_eq!(normalize_and(s.clone()), s);
    }

    #[test]
    fn tag_rules() {
        assert_eq!(Tag::new("@Slow").unwrap().name(), "Slow");
        assert_eq!(Tag::new("Slow").unwrap().to_string(), "@Slow");
        assert!(Tag::new("@").is_none());
        assert!(Tag::new("a b").is_none());
        assert_ne!(Tag::new("slow"), Tag::new("Slow"));
    }
}
