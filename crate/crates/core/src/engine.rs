//! Deterministic play-through of scenario graphs.
//!
//! Every operation is a pure transition: the old [`SessionState`] goes in and
//! a new one comes out. Timestamps are supplied by the caller, which keeps
//! replays bit-identical to live runs.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content::{Outcome, Phase, ScenarioGraph, Speaker, Tactic, Taxonomy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("level {level} is locked (unlocked up to {unlocked})")]
    LevelLocked { level: u8, unlocked: u8 },
    #[error("choice `{choice}` is not offered at node `{node}`")]
    InvalidChoice { choice: String, node: String },
    #[error("session is already completed")]
    SessionCompleted,
    #[error("session is not completed")]
    NotCompleted,
    #[error("expected {expected} quiz answers, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("quiz already graded")]
    QuizAlreadyGraded,
    #[error("history diverges at step {step}: {reason}")]
    DivergentHistory { step: usize, reason: String },
    #[error("session belongs to scenario `{expected}`, not `{got}`")]
    ScenarioMismatch { expected: String, got: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    Active,
    Completed,
}

/// One taken choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub node: String,
    pub choice: String,
    pub at: DateTime<Utc>,
}

/// Identity and start time of a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub participant_id: String,
    pub started_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub participant_id: String,
    pub scenario_id: String,
    pub scenario_level: u8,
    pub current_node: String,
    pub history: Vec<Step>,
    pub status: SessionStatus,
    pub outcome: Option<Outcome>,
    pub quiz_score: Option<u32>,
    pub started_at: DateTime<Utc>,
    pub completed_at: Option<DateTime<Utc>>,
}

impl SessionState {
    pub fn is_completed(&self) -> bool {
        self.status == SessionStatus::Completed
    }

    /// Derived game score: 1 for a safe outcome plus the quiz fraction.
    pub fn game_score(&self, g: &ScenarioGraph) -> Option<f64> {
        let outcome = self.outcome?;
        let base = if outcome == Outcome::Safe { 1.0 } else { 0.0 };
        let quiz = match (self.quiz_score, g.quiz.len()) {
            (Some(score), n) if n > 0 => f64::from(score) / n as f64,
            _ => 0.0,
        };
        Some(base + quiz)
    }

    fn visited(&self) -> impl Iterator<Item = &str> {
        self.history.iter().map(|s| s.node.as_str()).chain(std::iter::once(self.current_node.as_str()))
    }
}

/// A player's position on the difficulty ladder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderState {
    pub participant_id: String,
    pub unlocked_level: u8,
    pub completed_scenarios: BTreeSet<String>,
}

impl LadderState {
    pub fn new(participant_id: impl Into<String>) -> Self {
        Self { participant_id: participant_id.into(), unlocked_level: 1, completed_scenarios: BTreeSet::new() }
    }

    pub fn is_unlocked(&self, level: u8) -> bool {
        level <= self.unlocked_level
    }
}

/// Whether the viewer shows inoculation content. Discernment test items are
/// played with [`FeedbackMode::NoFeedback`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackMode {
    Training,
    NoFeedback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub node_id: String,
    pub speaker: Speaker,
    pub phase: Phase,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceView {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlockedRefutation {
    pub tactic: Tactic,
    pub display_name: String,
    pub text: String,
}

/// Quiz question as shown to the player (no answer key).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizPrompt {
    pub prompt: String,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub scenario_id: String,
    pub title: String,
    pub status: SessionStatus,
    pub outcome: Option<Outcome>,
    pub transcript: Vec<Message>,
    pub choices: Vec<ChoiceView>,
    pub refutations_unlocked: Vec<UnlockedRefutation>,
    pub advisory: Option<String>,
    pub quiz: Vec<QuizPrompt>,
    pub quiz_score: Option<u32>,
}

/// Opens a session at the scenario root.
pub fn start_session(meta: SessionMeta, g: &ScenarioGraph, ladder: &LadderState) -> Result<SessionState, EngineError> {
    if !ladder.is_unlocked(g.level) {
        return Err(EngineError::LevelLocked { level: g.level, unlocked: ladder.unlocked_level });
    }
    Ok(fresh(meta, g))
}

fn fresh(meta: SessionMeta, g: &ScenarioGraph) -> SessionState {
    let root = g.root_node();
    // a terminal root completes immediately
    let (status, outcome, completed_at) = if root.is_terminal() {
        (SessionStatus::Completed, root.terminal_outcome, Some(meta.started_at))
    } else {
        (SessionStatus::Active, None, None)
    };
    SessionState {
        session_id: meta.session_id,
        participant_id: meta.participant_id,
        scenario_id: g.id.clone(),
        scenario_level: g.level,
        current_node: g.root.clone(),
        history: Vec::new(),
        status,
        outcome,
        quiz_score: None,
        started_at: meta.started_at,
        completed_at,
    }
}

/// Takes `choice_id` at the current node.
pub fn apply_choice(
    s: &SessionState,
    g: &ScenarioGraph,
    choice_id: &str,
    at: DateTime<Utc>,
) -> Result<SessionState, EngineError> {
    check_scenario(s, g)?;
    if s.is_completed() {
        return Err(EngineError::SessionCompleted);
    }
    let node = &g.nodes[&s.current_node];
    let choice = node
        .choice(choice_id)
        .ok_or_else(|| EngineError::InvalidChoice { choice: choice_id.to_string(), node: node.id.clone() })?;
    let target = &g.nodes[&choice.target];

    let mut next = s.clone();
    next.history.push(Step { node: node.id.clone(), choice: choice.id.clone(), at });
    next.current_node = target.id.clone();
    if target.is_terminal() {
        next.status = SessionStatus::Completed;
        next.outcome = target.terminal_outcome;
        next.completed_at = Some(at);
    }
    Ok(next)
}

/// Grades the post-scenario quiz; returns the updated state and the number
/// of correct answers.
pub fn grade_quiz(s: &SessionState, g: &ScenarioGraph, answers: &[usize]) -> Result<(SessionState, u32), EngineError> {
    check_scenario(s, g)?;
    if !s.is_completed() {
        return Err(EngineError::NotCompleted);
    }
    if s.quiz_score.is_some() {
        return Err(EngineError::QuizAlreadyGraded);
    }
    if answers.len() != g.quiz.len() {
        return Err(EngineError::LengthMismatch { expected: g.quiz.len(), got: answers.len() });
    }
    let score = g.quiz.iter().zip(answers).filter(|(q, a)| q.correct_index == **a).count() as u32;
    let mut next = s.clone();
    next.quiz_score = Some(score);
    Ok((next, score))
}

/// Records a completed session on the ladder, unlocking the next level the
/// first time a scenario at the current top level is finished.
pub fn complete_level(ladder: &LadderState, s: &SessionState) -> Result<LadderState, EngineError> {
    if !s.is_completed() {
        return Err(EngineError::NotCompleted);
    }
    let mut next = ladder.clone();
    if next.completed_scenarios.insert(s.scenario_id.clone()) {
        next.unlocked_level = next.unlocked_level.max(s.scenario_level + 1).min(3);
    }
    Ok(next)
}

/// Rebuilds a session from its recorded history.
pub fn replay(meta: SessionMeta, g: &ScenarioGraph, history: &[Step]) -> Result<SessionState, EngineError> {
    let mut state = fresh(meta, g);
    for (i, step) in history.iter().enumerate() {
        if step.node != state.current_node {
            return Err(EngineError::DivergentHistory {
                step: i,
                reason: format!("expected node `{}`, history has `{}`", state.current_node, step.node),
            });
        }
        state = apply_choice(&state, g, &step.choice, step.at)
            .map_err(|e| EngineError::DivergentHistory { step: i, reason: e.to_string() })?;
    }
    Ok(state)
}

/// Renders what the player sees.
pub fn view(s: &SessionState, g: &ScenarioGraph, taxonomy: &Taxonomy, mode: FeedbackMode) -> SessionView {
    let mut transcript = Vec::with_capacity(2 * s.history.len() + 1);
    for step in &s.history {
        let node = &g.nodes[&step.node];
        transcript.push(node_message(node));
        if let Some(choice) = node.choice(&step.choice) {
            transcript.push(Message {
                node_id: node.id.clone(),
                speaker: Speaker::Player,
                phase: node.phase,
                text: choice.label.clone(),
            });
        }
    }
    let current = &g.nodes[&s.current_node];
    transcript.push(node_message(current));

    let choices = if s.is_completed() {
        Vec::new()
    } else {
        current.choices.iter().map(|c| ChoiceView { id: c.id.clone(), label: c.label.clone() }).collect()
    };

    let training = mode == FeedbackMode::Training;
    let refutations_unlocked = if training {
        unlocked_tactics(s, g)
            .into_iter()
            .map(|t| UnlockedRefutation {
                tactic: t,
                display_name: taxonomy.get(t).display_name.clone(),
                text: g.refutation_for(t).unwrap_or(&taxonomy.get(t).refutation).to_string(),
            })
            .collect()
    } else {
        Vec::new()
    };
    let done = s.is_completed() && training;

    SessionView {
        session_id: s.session_id.clone(),
        scenario_id: g.id.clone(),
        title: g.title.clone(),
        status: s.status,
        outcome: s.outcome,
        transcript,
        choices,
        refutations_unlocked,
        advisory: done.then(|| g.advisory.clone()),
        quiz: if done {
            g.quiz.iter().map(|q| QuizPrompt { prompt: q.prompt.clone(), options: q.options.clone() }).collect()
        } else {
            Vec::new()
        },
        quiz_score: s.quiz_score,
    }
}

/// Tactics tagged on the nodes visited so far, in taxonomy order.
pub fn unlocked_tactics(s: &SessionState, g: &ScenarioGraph) -> BTreeSet<Tactic> {
    s.visited().filter_map(|id| g.nodes.get(id)).flat_map(|n| n.tactic_tags.iter().copied()).collect()
}

fn node_message(node: &crate::content::Node) -> Message {
    Message { node_id: node.id.clone(), speaker: node.speaker, phase: node.phase, text: node.body.clone() }
}

fn check_scenario(s: &SessionState, g: &ScenarioGraph) -> Result<(), EngineError> {
    if s.scenario_id != g.id {
        return Err(EngineError::ScenarioMismatch { expected: s.scenario_id.clone(), got: g.id.clone() });
    }
    Ok(())
}

/// Transcript export record (one JSON line per event).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub ts: DateTime<Utc>,
    pub session_id: String,
    pub kind: String,
    pub payload: serde_json::Value,
}

/// Event stream describing a session, suitable for JSON-lines export.
pub fn session_events(s: &SessionState) -> Vec<SessionEvent> {
    let ev =
        |ts, kind: &str, payload| SessionEvent { ts, session_id: s.session_id.clone(), kind: kind.into(), payload };
    let mut out = vec![ev(
        s.started_at,
        "started",
        serde_json::json!({"participant_id": s.participant_id, "scenario_id": s.scenario_id}),
    )];
    for step in &s.history {
        out.push(ev(step.at, "choice", serde_json::json!({"node": step.node, "choice": step.choice})));
    }
    if let (Some(at), Some(outcome)) = (s.completed_at, s.outcome) {
        out.push(ev(at, "completed", serde_json::json!({"outcome": outcome, "quiz_score": s.quiz_score})));
    }
    out
}

/// Writes [`session_events`] as JSON lines.
pub fn session_events_jsonl(s: &SessionState) -> String {
    session_events(s)
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serialization cannot fail") + "\n")
        .collect()
}
