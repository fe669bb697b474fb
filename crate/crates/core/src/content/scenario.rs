//! Scenario graphs and the JSON scenario file format.
//!
//! A scenario is a DAG of message nodes. Every root-to-terminal path walks
//! through the hook, interaction and closure phases in that order, every
//! terminal carries an outcome, and every tactic tagged on a node has a
//! matching refutation card.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ContentError, GraphViolation, ScamType, Tactic, Vulnerability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Hook,
    Interaction,
    Closure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    Scammer,
    System,
    Narrator,
    Player,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Safe,
    Compromised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Risk {
    Safe,
    Risky,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Choice {
    pub id: String,
    pub label: String,
    pub target: String,
    pub risk: Risk,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub phase: Phase,
    pub speaker: Speaker,
    pub body: String,
    pub choices: Vec<Choice>,
    pub tactic_tags: BTreeSet<Tactic>,
    pub terminal_outcome: Option<Outcome>,
}

impl Node {
    pub fn is_terminal(&self) -> bool {
        self.choices.is_empty()
    }

    pub fn choice(&self, choice_id: &str) -> Option<&Choice> {
        self.choices.iter().find(|c| c.id == choice_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefutationCard {
    pub tactic: Tactic,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuizQuestion {
    pub prompt: String,
    pub options: Vec<String>,
    pub correct_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tactic: Option<Tactic>,
}

/// A validated branching scenario.
///
/// Values produced by [`parse_scenario`] (or deserialized through serde)
/// satisfy every structural invariant; code that builds one by hand should
/// call [`ScenarioGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioDoc", into = "ScenarioDoc")]
pub struct ScenarioGraph {
    pub id: String,
    pub title: String,
    pub scam_type: ScamType,
    pub is_scam: bool,
    pub level: u8,
    pub vulnerabilities: BTreeSet<Vulnerability>,
    pub root: String,
    pub nodes: BTreeMap<String, Node>,
    pub refutation_cards: Vec<RefutationCard>,
    pub advisory: String,
    pub quiz: Vec<QuizQuestion>,
}

const TOP_LEVEL_KEYS: [&str; 11] = [
    "id",
    "title",
    "scam_type",
    "is_scam",
    "level",
    "vulnerabilities",
    "root",
    "nodes",
    "refutation_cards",
    "advisory",
    "quiz",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    id: String,
    title: String,
    scam_type: ScamType,
    is_scam: bool,
    level: i64,
    vulnerabilities: Vec<Vulnerability>,
    root: String,
    nodes: BTreeMap<String, NodeDoc>,
    refutation_cards: Vec<RefutationCard>,
    advisory: String,
    quiz: Vec<QuizQuestion>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    phase: Phase,
    speaker: Speaker,
    body: String,
    #[serde(default)]
    choices: Vec<Choice>,
    #[serde(default)]
    tactic_tags: Vec<Tactic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terminal_outcome: Option<Outcome>,
}

/// Parses and validates one scenario file.
pub fn parse_scenario(doc: &str) -> Result<ScenarioGraph, ContentError> {
    let value: Value = serde_json::from_str(doc).map_err(ContentError::from_syntax)?;
    let obj = value.as_object().ok_or_else(|| ContentError::schema("$", "scenario must be a JSON object"))?;
    if let Some(unknown) = obj.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
        return Err(ContentError::schema(unknown.clone(), "unknown key"));
    }
    if let Some(missing) = TOP_LEVEL_KEYS.iter().find(|k| !obj.contains_key(**k)) {
        return Err(ContentError::schema(*missing, "missing key"));
    }
    let raw: ScenarioDoc = serde_path_to_error::deserialize(value).map_err(schema_error)?;
    ScenarioGraph::try_from(raw)
}

fn schema_error(e: serde_path_to_error::Error<serde_json::Error>) -> ContentError {
    let path = e.path().to_string();
    let message = e.inner().to_string();
    // serde reports missing/unknown fields against the parent object
    let named = ["missing field `", "unknown field `"]
        .iter()
        .find_map(|prefix| message.strip_prefix(prefix))
        .and_then(|rest| rest.split('`').next());
    let field = match named {
        Some(name) if path == "." => name.to_string(),
        Some(name) => format!("{path}.{name}"),
        None => path,
    };
    ContentError::Schema { field, message }
}

impl TryFrom<ScenarioDoc> for ScenarioGraph {
    type Error = ContentError;

    fn try_from(doc: ScenarioDoc) -> Result<Self, ContentError> {
        let level = match doc.level {
            1..=3 => doc.level as u8,
            other => return Err(ContentError::schema("level", format!("level must be 1, 2 or 3, got {other}"))),
        };
        let nodes = doc
            .nodes
            .into_iter()
            .map(|(id, n)| {
                let node = Node {
                    id: id.clone(),
                    phase: n.phase,
                    speaker: n.speaker,
                    body: n.body,
                    choices: n.choices,
                    tactic_tags: n.tactic_tags.into_iter().collect(),
                    terminal_outcome: n.terminal_outcome,
                };
                (id, node)
            })
            .collect();
        let graph = ScenarioGraph {
            id: doc.id,
            title: doc.title,
            scam_type: doc.scam_type,
            is_scam: doc.is_scam,
            level,
            vulnerabilities: doc.vulnerabilities.into_iter().collect(),
            root: doc.root,
            nodes,
            refutation_cards: doc.refutation_cards,
            advisory: doc.advisory,
            quiz: doc.quiz,
        };
        graph.validate()?;
        Ok(graph)
    }
}

impl From<ScenarioGraph> for ScenarioDoc {
    fn from(g: ScenarioGraph) -> Self {
        ScenarioDoc {
            id: g.id,
            title: g.title,
            scam_type: g.scam_type,
            is_scam: g.is_scam,
            level: i64::from(g.level),
            vulnerabilities: g.vulnerabilities.into_iter().collect(),
            root: g.root,
            nodes: g
                .nodes
                .into_iter()
                .map(|(id, n)| {
                    let doc = NodeDoc {
                        phase: n.phase,
                        speaker: n.speaker,
                        body: n.body,
                        choices: n.choices,
                        tactic_tags: n.tactic_tags.into_iter().collect(),
                        terminal_outcome: n.terminal_outcome,
                    };
                    (id, doc)
                })
                .collect(),
            refutation_cards: g.refutation_cards,
            advisory: g.advisory,
            quiz: g.quiz,
        }
    }
}

impl ScenarioGraph {
    /// Serializes to the scenario file format.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn root_node(&self) -> &Node {
        &self.nodes[&self.root]
    }

    /// Tactics tagged on any node.
    pub fn tactics_used(&self) -> BTreeSet<Tactic> {
        self.nodes.values().flat_map(|n| n.tactic_tags.iter().copied()).collect()
    }

    pub fn tactics_with_cards(&self) -> BTreeSet<Tactic> {
        self.refutation_cards.iter().map(|c| c.tactic).collect()
    }

    /// Card text for a tactic; the first card wins when several exist.
    pub fn refutation_for(&self, tactic: Tactic) -> Option<&str> {
        self.refutation_cards.iter().find(|c| c.tactic == tactic).map(|c| c.text.as_str())
    }

    /// Number of choices on the longest root-to-terminal path.
    pub fn longest_path_len(&self) -> usize {
        fn depth(g: &ScenarioGraph, id: &str, memo: &mut BTreeMap<String, usize>) -> usize {
            if let Some(d) = memo.get(id) {
                return *d;
            }
            let node = &g.nodes[id];
            let d = node.choices.iter().map(|c| 1 + depth(g, &c.target, memo)).max().unwrap_or(0);
            memo.insert(id.to_string(), d);
            d
        }
        depth(self, &self.root, &mut BTreeMap::new())
    }

    /// Checks every structural invariant of the content model.
    pub fn validate(&self) -> Result<(), ContentError> {
        self.validate_fields()?;

        if !self.nodes.contains_key(&self.root) {
            return Err(ContentError::graph(&self.root, GraphViolation::MissingRoot));
        }
        for node in self.nodes.values() {
            for choice in &node.choices {
                if !self.nodes.contains_key(&choice.target) {
                    return Err(ContentError::graph(
                        &choice.target,
                        GraphViolation::DanglingTarget { choice: choice.id.clone() },
                    ));
                }
            }
            match (node.is_terminal(), node.terminal_outcome) {
                (true, None) => return Err(ContentError::graph(&node.id, GraphViolation::TerminalWithoutOutcome)),
                (false, Some(_)) => return Err(ContentError::graph(&node.id, GraphViolation::OutcomeOnChoiceNode)),
                _ => {}
            }
        }

        let reachable = self.reachable();
        if let Some(orphan) = self.nodes.keys().find(|id| !reachable.contains(id.as_str())) {
            return Err(ContentError::graph(orphan, GraphViolation::Unreachable));
        }
        if let Some(id) = self.find_cycle() {
            return Err(ContentError::graph(id, GraphViolation::Cycle));
        }

        let root = self.root_node();
        if root.phase != Phase::Hook {
            return Err(ContentError::graph(&root.id, GraphViolation::RootNotHook));
        }
        if self.is_scam && root.is_terminal() {
            return Err(ContentError::graph(&root.id, GraphViolation::RootIsTerminal));
        }
        for node in self.nodes.values() {
            if node.is_terminal() && node.phase != Phase::Closure {
                return Err(ContentError::graph(&node.id, GraphViolation::TerminalNotClosure));
            }
            for choice in &node.choices {
                let next = self.nodes[&choice.target].phase;
                if next < node.phase {
                    return Err(ContentError::graph(&choice.target, GraphViolation::PhaseRegression));
                }
                if next as u8 > node.phase as u8 + 1 {
                    return Err(ContentError::graph(&choice.target, GraphViolation::PhaseSkipped));
                }
            }
        }

        if self.is_scam {
            let outcomes: BTreeSet<Outcome> = self.nodes.values().filter_map(|n| n.terminal_outcome).collect();
            for needed in [Outcome::Safe, Outcome::Compromised] {
                if !outcomes.contains(&needed) {
                    return Err(ContentError::graph(&self.id, GraphViolation::MissingOutcome(needed)));
                }
            }
        }

        let carded = self.tactics_with_cards();
        for node in self.nodes.values() {
            if let Some(t) = node.tactic_tags.iter().find(|t| !carded.contains(t)) {
                return Err(ContentError::graph(&node.id, GraphViolation::MissingRefutationCard(*t)));
            }
        }
        Ok(())
    }

    fn validate_fields(&self) -> Result<(), ContentError> {
        if self.id.trim().is_empty() {
            return Err(ContentError::schema("id", "must not be empty"));
        }
        if !(1..=3).contains(&self.level) {
            return Err(ContentError::schema("level", "level must be 1, 2 or 3"));
        }
        for node in self.nodes.values() {
            if node.id.trim().is_empty() {
                return Err(ContentError::schema("nodes", "node ids must not be empty"));
            }
            let mut seen = BTreeSet::new();
            for (i, choice) in node.choices.iter().enumerate() {
                if choice.label.trim().is_empty() {
                    return Err(ContentError::schema(
                        format!("nodes.{}.choices[{i}].label", node.id),
                        "must not be empty",
                    ));
                }
                if !seen.insert(choice.id.as_str()) {
                    return Err(ContentError::schema(
                        format!("nodes.{}.choices[{i}].id", node.id),
                        format!("duplicate choice id `{}`", choice.id),
                    ));
                }
            }
        }
        for (i, card) in self.refutation_cards.iter().enumerate() {
            if card.text.trim().is_empty() {
                return Err(ContentError::schema(format!("refutation_cards[{i}].text"), "must not be empty"));
            }
        }
        for (i, q) in self.quiz.iter().enumerate() {
            if q.options.len() < 2 {
                return Err(ContentError::schema(format!("quiz[{i}].options"), "at least two options required"));
            }
            if q.correct_index >= q.options.len() {
                return Err(ContentError::schema(
                    format!("quiz[{i}].correct_index"),
                    format!("index {} out of range for {} options", q.correct_index, q.options.len()),
                ));
            }
        }
        Ok(())
    }

    fn reachable(&self) -> BTreeSet<&str> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.root.as_str()];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(node) = self.nodes.get(id) {
                stack.extend(node.choices.iter().map(|c| c.target.as_str()));
            }
        }
        seen
    }

    /// Returns a node on a cycle, if any.
    fn find_cycle(&self) -> Option<&str> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Done,
        }
        let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
        // (node, index of next choice to explore)
        let mut stack: Vec<(&str, usize)> = vec![(self.root.as_str(), 0)];
        marks.insert(self.root.as_str(), Mark::Open);
        while let Some((id, next)) = stack.last_mut() {
            let node = &self.nodes[*id];
            if let Some(choice) = node.choices.get(*next) {
                *next += 1;
                let target = choice.target.as_str();
                match marks.get(target) {
                    Some(Mark::Open) => return Some(target),
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(target, Mark::Open);
                        stack.push((target, 0));
                    }
                }
            } else {
                marks.insert(id, Mark::Done);
                stack.pop();
            }
        }
        None
    }
}

/// One root-to-terminal route: visited node ids and the choices taken
/// between them (`choices.len() == nodes.len() - 1`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioPath {
    pub nodes: Vec<String>,
    pub choices: Vec<String>,
}

impl ScenarioPath {
    pub fn outcome(&self, g: &ScenarioGraph) -> Option<Outcome> {
        self.nodes.last().and_then(|id| g.nodes.get(id)).and_then(|n| n.terminal_outcome)
    }
}

/// Enumerates every root-to-terminal path, in declared choice order.
pub fn scenario_paths(g: &ScenarioGraph) -> Vec<ScenarioPath> {
    let mut out = Vec::new();
    let mut nodes = vec![g.root.clone()];
    let mut choices = Vec::new();
    walk(g, &mut nodes, &mut choices, &mut out);
    out
}

fn walk(g: &ScenarioGraph, nodes: &mut Vec<String>, choices: &mut Vec<String>, out: &mut Vec<ScenarioPath>) {
    let node = &g.nodes[nodes.last().unwrap()];
    if node.is_terminal() {
        out.push(ScenarioPath { nodes: nodes.clone(), choices: choices.clone() });
        return;
    }
    for choice in &node.choices {
        nodes.push(choice.target.clone());
        choices.push(choice.id.clone());
        walk(g, nodes, choices, out);
        nodes.pop();
        choices.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({
            "id": "mini",
            "title": "Minimal",
            "scam_type": "Courier",
            "is_scam": false,
            "level": 1,
            "vulnerabilities": [],
            "root": "n1",
            "nodes": {
                "n1": {"phase": "Hook", "speaker": "System", "body": "A parcel update arrives.",
                       "choices": [{"id": "c1", "label": "Open it", "target": "n2", "risk": "Neutral"}]},
                "n2": {"phase": "Interaction", "speaker": "System", "body": "Tracking page.",
                       "choices": [{"id": "c2", "label": "Close", "target": "n3", "risk": "Safe"}]},
                "n3": {"phase": "Closure", "speaker": "Narrator", "body": "Delivered.", "terminal_outcome": "Safe"}
            },
            "refutation_cards": [],
            "advisory": "Track parcels in the courier's official app.",
            "quiz": []
        })
    }

    fn parse(v: &Value) -> Result<ScenarioGraph, ContentError> {
        parse_scenario(&v.to_string())
    }

    #[test]
    fn minimal_document_parses() {
        let g = parse(&minimal()).unwrap();
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(scenario_paths(&g).len(), 1);
        assert_eq!(g.longest_path_len(), 2);
    }

    #[test]
    fn dangling_target_names_missing_node() {
        let mut v = minimal();
        v["nodes"]["n2"]["choices"][0]["target"] = json!("n99");
        let err = parse(&v).unwrap_err();
        assert_eq!(err, ContentError::graph("n99", GraphViolation::DanglingTarget { choice: "c2".into() }));
    }

    #[test]
    fn tag_without_card_is_coverage_error() {
        let mut v = minimal();
        v["nodes"]["n2"]["tactic_tags"] = json!(["UrgencyScarcity"]);
        let err = parse(&v).unwrap_err();
        assert_eq!(err.class(), "refutation-coverage");
        v["refutation_cards"] = json!([{"tactic": "UrgencyScarcity", "text": "Deadlines are invented."}]);
        assert!(parse(&v).is_ok());
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_scenario("{\n  \"id\": ").unwrap_err();
        match err {
            ContentError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_field() {
        let mut v = minimal();
        v.as_object_mut().unwrap().insert("extra".into(), json!(1));
        assert_eq!(parse(&v).unwrap_err(), ContentError::schema("extra", "unknown key"));

        let mut v = minimal();
        v.as_object_mut().unwrap().remove("advisory");
        assert_eq!(parse(&v).unwrap_err(), ContentError::schema("advisory", "missing key"));

        let mut v = minimal();
        v["level"] = json!(4);
        assert!(matches!(parse(&v).unwrap_err(), ContentError::Schema { field, .. } if field == "level"));

        let mut v = minimal();
        v["nodes"]["n1"]["phase"] = json!("Middle");
        assert!(matches!(parse(&v).unwrap_err(), ContentError::Schema { field, .. } if field == "nodes.n1.phase"));

        let mut v = minimal();
        v["nodes"]["n1"].as_object_mut().unwrap().remove("speaker");
        assert!(matches!(parse(&v).unwrap_err(), ContentError::Schema { field, .. } if field == "nodes.n1.speaker"));

        let mut v = minimal();
        v["quiz"] = json!([{"prompt": "?", "options": ["a", "b"], "correct_index": 2}]);
        assert!(
            matches!(parse(&v).unwrap_err(), ContentError::Schema { field, .. } if field == "quiz[0].correct_index")
        );
    }

    #[test]
    fn structural_violations() {
        let mut v = minimal();
        v["nodes"]["n3"]["choices"] = json!([{"id": "back", "label": "Again", "target": "n1", "risk": "Neutral"}]);
        v["nodes"]["n3"].as_object_mut().unwrap().remove("terminal_outcome");
        assert_eq!(parse(&v).unwrap_err().class(), "cycle");

        let mut v = minimal();
        v["nodes"]["n4"] = json!({"phase": "Closure", "speaker": "System", "body": "x", "terminal_outcome": "Safe"});
        assert_eq!(parse(&v).unwrap_err(), ContentError::graph("n4", GraphViolation::Unreachable));

        let mut v = minimal();
        v["nodes"]["n3"].as_object_mut().unwrap().remove("terminal_outcome");
        assert_eq!(parse(&v).unwrap_err().class(), "terminal-without-outcome");

        let mut v = minimal();
        v["nodes"]["n1"]["terminal_outcome"] = json!("Safe");
        assert_eq!(parse(&v).unwrap_err().class(), "outcome-on-choice-node");

        let mut v = minimal();
        v["nodes"]["n1"]["choices"] = json!([
            {"id": "c1", "label": "Skip", "target": "n3", "risk": "Neutral"},
            {"id": "c1b", "label": "Open", "target": "n2", "risk": "Neutral"}
        ]);
        assert_eq!(parse(&v).unwrap_err().class(), "phase-skipped");

        let mut v = minimal();
        v["nodes"]["n1"]["phase"] = json!("Interaction");
        assert_eq!(parse(&v).unwrap_err().class(), "root-not-hook");

        let mut v = minimal();
        v["is_scam"] = json!(true);
        assert_eq!(
            parse(&v).unwrap_err(),
            ContentError::graph("mini", GraphViolation::MissingOutcome(Outcome::Compromised))
        );
    }

    #[test]
    fn binary_choice_gives_two_paths() {
        let mut v = minimal();
        v["nodes"]["n2"]["choices"] = json!([
            {"id": "c2", "label": "Close", "target": "n3", "risk": "Safe"},
            {"id": "c3", "label": "Pay the fee", "target": "n4", "risk": "Risky"}
        ]);
        v["nodes"]["n4"] = json!({"phase": "Closure", "speaker": "Narrator", "body": "Money lost.", "terminal_outcome": "Compromised"});
        v["is_scam"] = json!(true);
        let g = parse(&v).unwrap();
        let paths = scenario_paths(&g);
        assert_eq!(paths.len(), 2);
        assert_eq!(paths[1].choices, vec!["c1", "c3"]);
        assert_eq!(paths[1].outcome(&g), Some(Outcome::Compromised));
    }

    #[test]
    fn reserialization_round_trips() {
        let g = parse(&minimal()).unwrap();
        let again = parse_scenario(&g.to_json()).unwrap();
        assert_eq!(g, again);
    }
}
