//! The scenario language: a Gherkin subset of tagged scenarios made of
//! Given/When/Then/And clauses, plus typed step patterns that bind clauses
//! to executable actions.

mod ast;
mod format;
mod parser;
mod steps;
mod tags;

pub use ast::{normalize_and, normalize_feature, Clause, ClauseKind, FeatureFile, Scenario, Span, Tag};
pub use format::format_feature;
pub use parser::{parse_feature, ParseError, ParseErrorKind};
pub use steps::{
    bind_steps, bind_steps_indexed, split_list, ActionId, ArgValue, BindError, BoundStep, PatternError, PatternSet,
    SlotType, StepPattern,
};
pub use tags::{filter_by_tags, TagExpr, TagExprError};
