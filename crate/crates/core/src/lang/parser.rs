//! Line-oriented parser for `.feature` files.
//!
//! Accepted line forms: blank lines, `#` comments, `@tag` lines, an optional
//! `Feature:` header before the first scenario, `Scenario:` lines, and
//! `Given`/`When`/`Then`/`And` clause lines. Keywords are case-sensitive and
//! may be indented.

use std::collections::HashSet;

use thiserror::Error;

use super::ast::{Clause, ClauseKind, FeatureFile, Scenario, Span, Tag};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}:{}: {kind}", span.line)]
pub struct ParseError {
    pub path: String,
    pub span: Span,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("a scenario cannot start with an `And` clause")]
    LeadingAnd,
    #[error("clause outside of any scenario")]
    ClauseOutsideScenario,
    #[error("unknown keyword in line `{0}`")]
    UnknownKeyword(String),
    #[error("tags must be followed by a `Scenario:` line")]
    DanglingTags,
    #[error("invalid tag `{0}`")]
    InvalidTag(String),
    #[error("duplicate scenario title `{0}`")]
    DuplicateTitle(String),
    #[error("scenario title is empty")]
    EmptyTitle,
    #[error("`{0}` clause has no text")]
    EmptyClause(ClauseKind),
    #[error("`Feature:` header must precede all scenarios")]
    MisplacedFeature,
}

enum Line<'a> {
    Skip,
    Tags(&'a str),
    Feature,
    Scenario(&'a str),
    Clause(ClauseKind, &'a str),
}

fn classify(content: &str) -> Result<Line<'_>, ParseErrorKind> {
    if content.is_empty() || content.starts_with('#') {
        return Ok(Line::Skip);
    }
    if content.starts_with('@') {
        return Ok(Line::Tags(content));
    }
    if content.starts_with("Feature:") {
        return Ok(Line::Feature);
    }
    if let Some(title) = content.strip_prefix("Scenario:") {
        return Ok(Line::Scenario(title));
    }
    for kind in ClauseKind::KEYWORDS {
        if let Some(rest) = content.strip_prefix(kind.keyword()) {
            if rest.is_empty() {
                return Err(ParseErrorKind::EmptyClause(kind));
            }
            if rest.starts_with(char::is_whitespace) {
                return Ok(Line::Clause(kind, rest));
            }
        }
    }
    Err(ParseErrorKind::UnknownKeyword(content.to_owned()))
}

fn parse_tags(line: &str) -> Result<Vec<Tag>, ParseErrorKind> {
    line.split_whitespace()
        .map(|token| {
            if !token.starts_with('@') {
                return Err(ParseErrorKind::InvalidTag(token.to_owned()));
            }
            Tag::new(token).ok_or_else(|| ParseErrorKind::InvalidTag(token.to_owned()))
        })
        .collect()
}

/// Parses feature text into scenarios. Tags attach to the next scenario only.
pub fn parse_feature(text: &str, path: &str) -> Result<FeatureFile, ParseError> {
    let err = |line: usize, column: usize, kind| ParseError {
        path: path.to_owned(),
        span: Span { line, column },
        kind,
    };

    let mut scenarios: Vec<Scenario> = Vec::new();
    let mut titles = HashSet::new();
    let mut pending_tags: Vec<Tag> = Vec::new();
    let mut pending_tag_line = 0;

    for (index, raw) in text.split('\n').enumerate() {
        let line_no = index + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let content = raw.trim_start();
        let column = raw.chars().count() - content.chars().count() + 1;
        let content = content.trim_end();

        match classify(content).map_err(|k| err(line_no, column, k))? {
            Line::Skip => {}
            Line::Tags(tags) => {
                if pending_tags.is_empty() {
                    pending_tag_line = line_no;
                }
                pending_tags.extend(parse_tags(tags).map_err(|k| err(line_no, column, k))?);
            }
            Line::Feature => {
                if !scenarios.is_empty() || !pending_tags.is_empty() {
                    return Err(err(line_no, column, ParseErrorKind::MisplacedFeature));
                }
            }
            Line::Scenario(title) => {
                let title = title.trim();
                if title.is_empty() {
                    return Err(err(line_no, column, ParseErrorKind::EmptyTitle));
                }
                if !titles.insert(title.to_owned()) {
                    return Err(err(
                        line_no,
                        column,
                        ParseErrorKind::DuplicateTitle(title.to_owned()),
                    ));
                }
                scenarios.push(Scenario {
                    tags: std::mem::take(&mut pending_tags),
                    title: title.to_owned(),
                    clauses: Vec::new(),
                });
            }
            Line::Clause(kind, rest) => {
                if !pending_tags.is_empty() {
                    return Err(err(pending_tag_line, 1, ParseErrorKind::DanglingTags));
                }
                let Some(scenario) = scenarios.last_mut() else {
                    let kind = if kind == ClauseKind::And {
                        ParseErrorKind::LeadingAnd
                    } else {
                        ParseErrorKind::ClauseOutsideScenario
                    };
                    return Err(err(line_no, column, kind));
                };
                if kind == ClauseKind::And && scenario.clauses.is_empty() {
                    return Err(err(line_no, column, ParseErrorKind::LeadingAnd));
                }
                let text = rest.trim();
                if text.is_empty() {
                    return Err(err(line_no, column, ParseErrorKind::EmptyClause(kind)));
                }
                scenario.clauses.push(Clause {
                    kind,
                    text: text.to_owned(),
                    span: Span { line: line_no, column },
                });
            }
        }
    }

    if !pending_tags.is_empty() {
        return Err(err(pending_tag_line, 1, ParseErrorKind::DanglingTags));
    }

    Ok(FeatureFile { path: path.to_owned(), scenarios })
}
