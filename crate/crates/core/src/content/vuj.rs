//! Victim user journey corpus metadata (JSON lines).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ContentError, ScamType, Tactic, Vulnerability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceKind {
    News,
    SocialMedia,
    Watchdog,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VujPhases {
    pub hook: String,
    pub interaction: String,
    pub closure: String,
}

/// Metadata for one analysed victim story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VujRecord {
    pub scam_type: ScamType,
    pub source_kind: SourceKind,
    pub phases: VujPhases,
    pub tactics: BTreeSet<Tactic>,
    pub vulnerabilities: BTreeSet<Vulnerability>,
    pub emotions: Vec<String>,
}

/// Parses JSON lines; blank lines are skipped. Errors carry the 1-based line.
pub fn parse_vuj_lines(text: &str) -> Result<Vec<VujRecord>, ContentError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let value: serde_json::Value = serde_json::from_str(line).map_err(|e| ContentError::Syntax {
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            serde_path_to_error::deserialize(value).map_err(|e| ContentError::Schema {
                field: format!("line {}: {}", i + 1, e.path()),
                message: e.inner().to_string(),
            })
        })
        .collect()
}
