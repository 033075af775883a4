//! Rule-based conformance checking of poems against their form.
//!
//! Structure (line count, line lengths, punctuation), pairing and acrostic
//! heads are hard rules: they decide `well_formed`. Rhyme and tone depend on
//! a pluggable phonology table and are advisory unless promoted.

mod checks;
mod form;
mod phonology;

use serde::Serialize;

pub use checks::{
    check_acrostic, check_pairing, check_rhyme, check_structure, check_tone, FUNCTION_WORDS,
};
pub use form::{FormClass, FormSpec, LineRule, Template, ToneClass, TonePattern, ToneSlot};
pub use phonology::PhonologyTable;

use crate::corpus::{FormCatalog, Poem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleId {
    LineCount,
    LineLength,
    Punctuation,
    Pairing,
    Rhyme,
    Tone,
    Acrostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    /// Could not be decided, e.g. a character missing from the phonology
    /// table.
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Hard,
    Advisory,
}

/// A location inside the body: 0-based line, optional 0-based column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Position {
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

impl Position {
    pub fn line(line: usize) -> Self {
        Position { line, column: None }
    }

    pub fn at(line: usize, column: usize) -> Self {
        Position {
            line,
            column: Some(column),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleResult {
    pub rule: RuleId,
    pub severity: Severity,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub positions: Vec<Position>,
    pub message: String,
}

impl RuleResult {
    pub(crate) fn new(rule: RuleId, severity: Severity, outcome: Outcome, message: impl Into<String>) -> Self {
        RuleResult {
            rule,
            severity,
            outcome,
            positions: Vec::new(),
            message: message.into(),
        }
    }

    pub(crate) fn with_positions(mut self, positions: Vec<Position>) -> Self {
        self.positions = positions;
        self
    }

    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }

    /// A hard rule that did not pass.
    pub fn is_blocking(&self) -> bool {
        self.severity == Severity::Hard && self.outcome != Outcome::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub form_id: String,
    pub well_formed: bool,
    pub results: Vec<RuleResult>,
}

impl ValidationReport {
    pub fn from_results(form_id: impl Into<String>, results: Vec<RuleResult>) -> Self {
        let well_formed = !results.iter().any(RuleResult::is_blocking);
        ValidationReport {
            form_id: form_id.into(),
            well_formed,
            results,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &RuleResult> {
        self.results.iter().filter(|r| r.outcome != Outcome::Pass)
    }

    pub fn rule(&self, rule: RuleId) -> impl Iterator<Item = &RuleResult> {
        self.results.iter().filter(move |r| r.rule == rule)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ValidateOptions {
    /// Count rhyme and tone as hard rules.
    pub strict_phonology: bool,
}

/// Runs every check for the poem's form. Acrostic poems additionally have
/// their line heads checked against the theme.
pub fn validate(
    poem: &Poem,
    catalog: &FormCatalog,
    table: &PhonologyTable,
    opts: ValidateOptions,
) -> Result<ValidationReport> {
    let spec = catalog
        .resolve(&poem.form_id)
        .ok_or_else(|| Error::UnknownForm(poem.form_id.clone()))?;
    let mut results = check_structure(poem, spec);
    results.extend(check_pairing(poem, spec));
    let mut phonology = vec![check_rhyme(poem, spec, table)];
    phonology.extend(check_tone(poem, spec, table));
    if opts.strict_phonology {
        for r in &mut phonology {
            r.severity = Severity::Hard;
        }
    }
    results.extend(phonology);
    if poem.acrostic {
        results.push(check_acrostic(&poem.body, &poem.theme, spec.acrostic_stride));
    }
    Ok(ValidationReport::from_results(&spec.form_id, results))
}
