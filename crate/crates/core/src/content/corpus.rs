//! Loading a corpus directory: `taxonomy.json` plus `scenarios/*.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{lint_corpus, parse_scenario, ContentError, CoverageReport, ScenarioGraph, Taxonomy};

/// A file that failed to load, with its diagnostic.
#[derive(Debug, Clone)]
pub struct CorpusFailure {
    pub path: PathBuf,
    pub message: String,
    pub error: Option<ContentError>,
}

/// Result of scanning a corpus directory. Valid scenarios are kept even when
/// other files fail so that every problem can be reported at once.
#[derive(Debug, Clone)]
pub struct CorpusLoad {
    pub corpus: Corpus,
    pub failures: Vec<CorpusFailure>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub taxonomy: Taxonomy,
    scenarios: BTreeMap<String, ScenarioGraph>,
}

impl Corpus {
    pub fn new(taxonomy: Taxonomy, scenarios: impl IntoIterator<Item = ScenarioGraph>) -> Self {
        Self { taxonomy, scenarios: scenarios.into_iter().map(|g| (g.id.clone(), g)).collect() }
    }

    /// Scans `dir`. A missing `taxonomy.json` falls back to the bundled one.
    pub fn load_dir(dir: &Path) -> std::io::Result<CorpusLoad> {
        let mut failures = Vec::new();
        let tax_path = dir.join("taxonomy.json");
        let taxonomy = if tax_path.exists() {
            match Taxonomy::parse(&fs::read_to_string(&tax_path)?) {
                Ok(t) => t,
                Err(e) => {
                    failures.push(CorpusFailure { path: tax_path, message: e.to_string(), error: Some(e) });
                    Taxonomy::builtin()
                }
            }
        } else {
            Taxonomy::builtin()
        };

        let scen_dir = dir.join("scenarios");
        let mut files: Vec<PathBuf> = if scen_dir.is_dir() {
            fs::read_dir(&scen_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect()
        } else {
            Vec::new()
        };
        files.sort();

        let mut scenarios: BTreeMap<String, ScenarioGraph> = BTreeMap::new();
        for path in files {
            let text = fs::read_to_string(&path)?;
            match parse_scenario(&text) {
                Ok(g) if scenarios.contains_key(&g.id) => failures.push(CorpusFailure {
                    message: format!("duplicate scenario id `{}`", g.id),
                    path,
                    error: None,
                }),
                Ok(g) => {
                    scenarios.insert(g.id.clone(), g);
                }
                Err(e) => failures.push(CorpusFailure { path, message: e.to_string(), error: Some(e) }),
            }
        }
        Ok(CorpusLoad { corpus: Corpus { taxonomy, scenarios }, failures })
    }

    pub fn scenario(&self, id: &str) -> Option<&ScenarioGraph> {
        self.scenarios.get(id)
    }

    /// Scenarios ordered by id.
    pub fn scenarios(&self) -> impl Iterator<Item = &ScenarioGraph> {
        self.scenarios.values()
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn coverage(&self) -> CoverageReport {
        let all: Vec<ScenarioGraph> = self.scenarios.values().cloned().collect();
        lint_corpus(&all)
    }
}
