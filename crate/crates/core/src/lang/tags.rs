//! Boolean tag expressions: tag atoms combined with `and`, `or`, `not` and
//! parentheses. `not` binds tighter than `and`, which binds tighter than `or`.
//! Atoms may be written with or without the leading `@`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::ast::{Scenario, Tag};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TagExpr {
    Tag(Tag),
    Not(Box<TagExpr>),
    And(Box<TagExpr>, Box<TagExpr>),
    Or(Box<TagExpr>, Box<TagExpr>),
}

/// Malformed expression; `position` is the 0-based character offset.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid tag expression at position {position}: {message}")]
pub struct TagExprError {
    pub position: usize,
    pub message: String,
}

impl TagExpr {
    pub fn parse(input: &str) -> Result<Self, TagExprError> {
        let tokens = tokenize(input)?;
        let mut parser = ExprParser { tokens: &tokens, pos: 0, end: input.chars().count() };
        let expr = parser.or()?;
        if let Some(tok) = parser.peek() {
            return Err(TagExprError {
                position: tok.position,
                message: format!("unexpected `{}`", tok.text),
            });
        }
        Ok(expr)
    }

    pub fn matches<'a, I>(&self, tags: I) -> bool
    where
        I: IntoIterator<Item = &'a Tag> + Clone,
    {
        match self {
            Self::Tag(t) => tags.into_iter().any(|x| x == t),
            Self::Not(e) => !e.matches(tags),
            Self::And(a, b) => a.matches(tags.clone()) && b.matches(tags),
            Self::Or(a, b) => a.matches(tags.clone()) || b.matches(tags),
        }
    }

    pub fn matches_scenario(&self, scenario: &Scenario) -> bool {
        self.matches(&scenario.tags)
    }
}

impl FromStr for TagExpr {
    type Err = TagExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for TagExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tag(t) => write!(f, "{}", t.name()),
            Self::Not(e) => write!(f, "not ({e})"),
            Self::And(a, b) => write!(f, "({a} and {b})"),
            Self::Or(a, b) => write!(f, "({a} or {b})"),
        }
    }
}

/// Order-preserving subset of `scenarios` whose tags satisfy `expr`.
pub fn filter_by_tags<'a>(scenarios: &'a [Scenario], expr: &TagExpr) -> Vec<&'a Scenario> {
    scenarios.iter().filter(|s| expr.matches_scenario(s)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TokenKind {
    Open,
    Close,
    And,
    Or,
    Not,
    Atom(Tag),
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    text: String,
    position: usize,
}

fn tokenize(input: &str) -> Result<Vec<Token>, TagExprError> {
    let chars: Vec<char> = input.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '(' || c == ')' {
            let kind = if c == '(' { TokenKind::Open } else { TokenKind::Close };
            tokens.push(Token { kind, text: c.to_string(), position: i });
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '(' && chars[i] != ')' {
            i += 1;
        }
        let text: String = chars[start..i].iter().collect();
        let kind = match text.as_str() {
            "and" => TokenKind::And,
            "or" => TokenKind::Or,
            "not" => TokenKind::Not,
            _ => TokenKind::Atom(Tag::new(&text).ok_or_else(|| TagExprError {
                position: start,
                message: format!("invalid tag `{text}`"),
            })?),
        };
        tokens.push(Token { kind, text, position: start });
    }
    Ok(tokens)
}

struct ExprParser<'t> {
    tokens: &'t [Token],
    pos: usize,
    end: usize,
}

impl ExprParser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().is_some_and(|t| &t.kind == kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn or(&mut self) -> Result<TagExpr, TagExprError> {
        let mut lhs = self.and()?;
        while self.eat(&TokenKind::Or) {
            let rhs = self.and()?;
            lhs = TagExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<TagExpr, TagExprError> {
        let mut lhs = self.unary()?;
        while self.eat(&TokenKind::And) {
            let rhs = self.unary()?;
            lhs = TagExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<TagExpr, TagExprError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(TagExprError { position: self.end, message: "unexpected end of expression".into() });
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Not => Ok(TagExpr::Not(Box::new(self.unary()?))),
            TokenKind::Atom(tag) => Ok(TagExpr::Tag(tag)),
            TokenKind::Open => {
                let inner = self.or()?;
                if !self.eat(&TokenKind::Close) {
                    let position = self.peek().map_or(self.end, |t| t.position);
                    return Err(TagExprError { position, message: "expected `)`".into() });
                }
                Ok(inner)
            }
            TokenKind::Close | TokenKind::And | TokenKind::Or => Err(TagExprError {
                position: tok.position,
                message: format!("unexpected `{}`", tok.text),
            }),
        }
    }
}
