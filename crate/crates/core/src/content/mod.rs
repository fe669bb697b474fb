//! Scenario content model: the tactic taxonomy, scenario graphs, corpus
//! loading and coverage linting.

mod corpus;
mod lint;
mod scenario;
mod taxonomy;
mod vuj;

use std::fmt;

use thiserror::Error;

pub use corpus::{Corpus, CorpusFailure, CorpusLoad};
pub use lint::{lint_corpus, CoverageReport};
pub use scenario::{
    parse_scenario, scenario_paths, Choice, Node, Outcome, Phase, QuizQuestion, RefutationCard, Risk, ScenarioGraph,
    ScenarioPath, Speaker,
};
pub use taxonomy::{ScamType, Tactic, TacticInfo, Taxonomy, Vulnerability};
pub use vuj::{parse_vuj_lines, SourceKind, VujPhases, VujRecord};

/// What is structurally wrong with a scenario graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphViolation {
    MissingRoot,
    DanglingTarget { choice: String },
    Cycle,
    Unreachable,
    TerminalWithoutOutcome,
    OutcomeOnChoiceNode,
    RootNotHook,
    TerminalNotClosure,
    PhaseRegression,
    PhaseSkipped,
    RootIsTerminal,
    MissingOutcome(Outcome),
    MissingRefutationCard(Tactic),
}

impl GraphViolation {
    /// Short stable name of the violation class.
    pub fn class(&self) -> &'static str {
        match self {
            GraphViolation::MissingRoot => "missing-root",
            GraphViolation::DanglingTarget { .. } => "dangling-target",
            GraphViolation::Cycle => "cycle",
            GraphViolation::Unreachable => "unreachable",
            GraphViolation::TerminalWithoutOutcome => "terminal-without-outcome",
            GraphViolation::OutcomeOnChoiceNode => "outcome-on-choice-node",
            GraphViolation::RootNotHook => "root-not-hook",
            GraphViolation::TerminalNotClosure => "terminal-not-closure",
            GraphViolation::PhaseRegression => "phase-regression",
            GraphViolation::PhaseSkipped => "phase-skipped",
            GraphViolation::RootIsTerminal => "root-is-terminal",
            GraphViolation::MissingOutcome(_) => "missing-outcome",
            GraphViolation::MissingRefutationCard(_) => "refutation-coverage",
        }
    }
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::DanglingTarget { choice } => write!(f, "dangling-target (choice `{choice}`)"),
            GraphViolation::MissingOutcome(o) => write!(f, "missing-outcome ({o:?} terminal required)"),
            GraphViolation::MissingRefutationCard(t) => write!(f, "refutation-coverage (no card for {t})"),
            other => f.write_str(other.class()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContentError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("schema error in `{field}`: {message}")]
    Schema { field: String, message: String },
    /// `node_id` is the offending node; for dangling targets it is the
    /// missing target id.
    #[error("graph error at `{node_id}`: {violation}")]
    Graph { node_id: String, violation: GraphViolation },
}

impl ContentError {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        ContentError::Schema { field: field.into(), message: message.into() }
    }

    pub(crate) fn graph(node_id: impl Into<String>, violation: GraphViolation) -> Self {
        ContentError::Graph { node_id: node_id.into(), violation }
    }

    pub(crate) fn from_syntax(e: serde_json::Error) -> Self {
        ContentError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
    }

    /// "syntax", "schema" or the graph violation class.
    pub fn class(&self) -> &'static str {
        match self {
            ContentError::Syntax { .. } => "syntax",
            ContentError::Schema { .. } => "schema",
            ContentError::Graph { violation, .. } => violation.class(),
        }
    }
}
