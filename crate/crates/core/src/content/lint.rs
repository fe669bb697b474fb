//! Coverage linting over a scenario corpus.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::{ScenarioGraph, Tactic};

/// Per-tactic and per-level scenario counts for a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverageReport {
    pub scenarios: usize,
    pub scam_scenarios: usize,
    pub tactic_counts: BTreeMap<Tactic, usize>,
    pub level_counts: BTreeMap<u8, usize>,
    pub uncovered_tactics: Vec<Tactic>,
    pub empty_levels: Vec<u8>,
}

impl CoverageReport {
    pub fn is_clean(&self) -> bool {
        self.uncovered_tactics.is_empty() && self.empty_levels.is_empty()
    }

    pub fn tactics_covered(&self) -> usize {
        self.tactic_counts.values().filter(|c| **c > 0).count()
    }

    pub fn levels_covered(&self) -> usize {
        self.level_counts.values().filter(|c| **c > 0).count()
    }
}

/// Counts, per tactic, the scenarios that exercise it and, per level, the
/// scenarios at that level; flags gaps.
pub fn lint_corpus(scenarios: &[ScenarioGraph]) -> CoverageReport {
    let mut tactic_counts: BTreeMap<Tactic, usize> = Tactic::ALL.iter().map(|t| (*t, 0)).collect();
    let mut level_counts: BTreeMap<u8, usize> = (1..=3).map(|l| (l, 0)).collect();
    for g in scenarios {
        for t in g.tactics_used() {
            *tactic_counts.get_mut(&t).unwrap() += 1;
        }
        *level_counts.entry(g.level).or_default() += 1;
    }
    CoverageReport {
        scenarios: scenarios.len(),
        scam_scenarios: scenarios.iter().filter(|g| g.is_scam).count(),
        uncovered_tactics: tactic_counts.iter().filter(|(_, c)| **c == 0).map(|(t, _)| *t).collect(),
        empty_levels: level_counts.iter().filter(|(_, c)| **c == 0).map(|(l, _)| *l).collect(),
        tactic_counts,
        level_counts,
    }
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "scenarios: {} ({} scam, {} non-scam)",
            self.scenarios,
            self.scam_scenarios,
            self.scenarios - self.scam_scenarios
        )?;
        writeln!(f, "tactics covered: {}/6", self.tactics_covered())?;
        for (t, c) in &self.tactic_counts {
            let flag = if *c == 0 { "  UNCOVERED" } else { "" };
            writeln!(f, "  {:<16} {c}{flag}", t.as_str())?;
        }
        writeln!(f, "levels covered: {}/3", self.levels_covered())?;
        for (l, c) in &self.level_counts {
            let flag = if *c == 0 { "  EMPTY" } else { "" };
            writeln!(f, "  level {l}          {c}{flag}")?;
        }
        Ok(())
    }
}
