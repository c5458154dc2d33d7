use std::fmt::Write;

use super::ast::{normalize_and, FeatureFile};

/// Renders a feature file in canonical form.
///
/// Every clause is written with its resolved kind, so the output re-parses to
/// the normalized structure. Keywords are padded to a common width, one tag
/// per line, a blank line between scenarios, LF line endings.
pub fn format_feature(file: &FeatureFile) -> String {
    let mut out = String::new();
    for (i, scenario) in file.scenarios.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for tag in &scenario.tags {
            let _ = writeln!(out, "{tag}");
        }
        let _ = writeln!(out, "Scenario: {}", scenario.title);
        for clause in normalize_and(scenario.clone()).clauses {
            let _ = writeln!(out, "{:<5} {}", clause.kind.keyword(), clause.text);
        }
    }
    out
}
