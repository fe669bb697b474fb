//! Gameplay state folded from the trial event log: bearer credentials,
//! game sessions and difficulty ladders.
//!
//! Each mutation is split into `prepare_*`, which validates and computes the
//! resulting state without touching `self`, and [`Gameplay::commit`]. Handlers
//! log the event between the two steps, so a rejected request leaves both the
//! log and this fold unchanged.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use thiserror::Error;

use shieldup_core::content::Corpus;
use shieldup_core::engine::{
    apply_choice, complete_level, grade_quiz, start_session, EngineError, LadderState, SessionMeta, SessionState,
};
use shieldup_core::trial::{Event, EventKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("scenario `{0}` already completed")]
    AlreadyCompleted(String),
    #[error("logged quiz score {logged} does not match regraded score {graded}")]
    ScoreMismatch { logged: u32, graded: u32 },
}

/// A validated change waiting for its event to be logged.
#[derive(Debug, Clone, PartialEq)]
pub enum Pending {
    Credential { token_sha256: String, participant_id: String },
    Session { session: SessionState, ladder: Option<LadderState> },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gameplay {
    tokens: HashMap<String, String>,
    sessions: BTreeMap<String, SessionState>,
    ladders: BTreeMap<String, LadderState>,
}

impl Gameplay {
    /// Rebuilds the fold from every event in the log.
    pub fn fold<'a>(events: impl IntoIterator<Item = &'a Event>, corpus: &Corpus) -> Result<Self, (u64, GameError)> {
        let mut g = Self::default();
        for e in events {
            g.apply(e, corpus).map_err(|err| (e.seq, err))?;
        }
        Ok(g)
    }

    pub fn apply(&mut self, e: &Event, corpus: &Corpus) -> Result<(), GameError> {
        let pid = e.participant_id.as_str();
        let pending = match &e.kind {
            EventKind::CredentialIssued { token_sha256 } => Self::prepare_credential(pid, token_sha256),
            EventKind::SessionStarted { session_id, scenario_id } => {
                self.prepare_start(pid, session_id, scenario_id, e.ts, corpus)?
            }
            EventKind::ChoiceMade { session_id, choice_id } => {
                self.prepare_choice(pid, session_id, choice_id, e.ts, corpus)?
            }
            EventKind::QuizGraded { session_id, answers, score } => {
                let (pending, graded) = self.prepare_quiz(pid, session_id, answers, corpus)?;
                if graded != *score {
                    return Err(GameError::ScoreMismatch { logged: *score, graded });
                }
                pending
            }
            _ => return Ok(()),
        };
        self.commit(pending);
        Ok(())
    }

    pub fn prepare_credential(participant_id: &str, token_sha256: &str) -> Pending {
        Pending::Credential { token_sha256: token_sha256.to_string(), participant_id: participant_id.to_string() }
    }

    pub fn prepare_start(
        &self,
        participant_id: &str,
        session_id: &str,
        scenario_id: &str,
        at: DateTime<Utc>,
        corpus: &Corpus,
    ) -> Result<Pending, GameError> {
        let g = corpus.scenario(scenario_id).ok_or_else(|| GameError::UnknownScenario(scenario_id.to_string()))?;
        let ladder = self.ladder(participant_id);
        if ladder.completed_scenarios.contains(scenario_id) {
            return Err(GameError::AlreadyCompleted(scenario_id.to_string()));
        }
        let meta = SessionMeta {
            session_id: session_id.to_string(),
            participant_id: participant_id.to_string(),
            started_at: at,
        };
        let session = start_session(meta, g, &ladder)?;
        let ladder = session.is_completed().then(|| complete_level(&ladder, &session)).transpose()?;
        Ok(Pending::Session { session, ladder })
    }

    pub fn prepare_choice(
        &self,
        participant_id: &str,
        session_id: &str,
        choice_id: &str,
        at: DateTime<Utc>,
        corpus: &Corpus,
    ) -> Result<Pending, GameError> {
        let s = self.owned_session(participant_id, session_id)?;
        let g = corpus.scenario(&s.scenario_id).ok_or_else(|| GameError::UnknownScenario(s.scenario_id.clone()))?;
        let session = apply_choice(s, g, choice_id, at)?;
        let ladder =
            session.is_completed().then(|| complete_level(&self.ladder(participant_id), &session)).transpose()?;
        Ok(Pending::Session { session, ladder })
    }

    pub fn prepare_quiz(
        &self,
        participant_id: &str,
        session_id: &str,
        answers: &[usize],
        corpus: &Corpus,
    ) -> Result<(Pending, u32), GameError> {
        let s = self.owned_session(participant_id, session_id)?;
        let g = corpus.scenario(&s.scenario_id).ok_or_else(|| GameError::UnknownScenario(s.scenario_id.clone()))?;
        let (session, score) = grade_quiz(s, g, answers)?;
        Ok((Pending::Session { session, ladder: None }, score))
    }

    pub fn commit(&mut self, p: Pending) {
        match p {
            Pending::Credential { token_sha256, participant_id } => {
                self.tokens.insert(token_sha256, participant_id);
            }
            Pending::Session { session, ladder } => {
                if let Some(l) = ladder {
                    self.ladders.insert(l.participant_id.clone(), l);
                }
                self.sessions.insert(session.session_id.clone(), session);
            }
        }
    }

    pub fn participant_for_token(&self, token_sha256: &str) -> Option<&str> {
        self.tokens.get(token_sha256).map(String::as_str)
    }

    /// A session visible to `participant_id`. Sessions owned by someone else
    /// are reported as unknown.
    pub fn owned_session(&self, participant_id: &str, session_id: &str) -> Result<&SessionState, GameError> {
        self.sessions
            .get(session_id)
            .filter(|s| s.participant_id == participant_id)
            .ok_or_else(|| GameError::UnknownSession(session_id.to_string()))
    }

    pub fn sessions_of<'a>(&'a self, participant_id: &'a str) -> impl Iterator<Item = &'a SessionState> + 'a {
        self.sessions.values().filter(move |s| s.participant_id == participant_id)
    }

    pub fn ladder(&self, participant_id: &str) -> LadderState {
        self.ladders.get(participant_id).cloned().unwrap_or_else(|| LadderState::new(participant_id))
    }
}
